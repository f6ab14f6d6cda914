"""Explainable federated micro-segmentation of network flows.

Federated autoencoder embeddings, hypergraph spectral clustering,
risk-scored Allow/Block policies and LIME/SHAP justifications.
"""
from .config import PipelineConfig, load_config
from .pipeline import Pipeline, run

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "load_config", "Pipeline", "run", "__version__"]
