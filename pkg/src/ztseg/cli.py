"""Command-line entry point: ``ztseg <command> [--config FILE] [--<field> VALUE ...]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import types
import typing

import yaml

from . import pipeline as pl
from .config import ConfigError, field_types, load_config
from .synthetic import SCHEMA, generate_synthetic

NULLS = ("none", "null")


def _parser_for(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    optional = typing.get_origin(tp) in (typing.Union, types.UnionType) and len(args) < len(typing.get_args(tp))
    base = args[0] if optional else tp
    if base is dict:
        conv = json.loads
    elif base in (int, float, str):
        conv = base
    else:
        conv = str

    def parse(text):
        if optional and text.lower() in NULLS:
            return None
        return conv(text)

    parse.__name__ = getattr(base, "__name__", "value")
    return parse


def add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML or JSON config file")
    g = p.add_argument_group("config overrides (one flag per config key)")
    for name, tp in field_types().items():
        flag = "--" + name.replace("_", "-")
        if tp is bool:
            g.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            g.add_argument(flag, dest=name, type=_parser_for(tp), default=argparse.SUPPRESS, metavar=name.upper())


def build_parser():
    p = argparse.ArgumentParser(prog="ztseg", description="Federated hypergraph micro-segmentation pipeline")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every stage, skipping up-to-date ones")
    run.add_argument("--force", action="store_true", help="recompute every stage")
    run.add_argument("--report", action="store_true", help="print the consolidated text report")
    add_config_flags(run)
    for name in pl.STAGE_NAMES:
        sp = sub.add_parser(name, help=f"run only the {name} stage against existing artifacts")
        sp.add_argument("--force", action="store_true")
        add_config_flags(sp)
    rep = sub.add_parser("report", help="render the text report of a finished run")
    rep.add_argument("--out", required=True)
    syn = sub.add_parser("synth", help="write a synthetic labelled flow CSV and its schema")
    syn.add_argument("--rows", type=int, default=5000)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--shift", type=float, default=6.0)
    syn.add_argument("--attack-fraction", type=float, default=0.073)
    syn.add_argument("--output", required=True, help="CSV path; the schema goes next to it as .schema.yaml")
    return p


def _overrides(ns):
    names = set(field_types())
    return {k: v for k, v in vars(ns).items() if k in names}


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "report":
            print(pl.render_report(ns.out))
            return 0
        if ns.command == "synth":
            raw = generate_synthetic(ns.rows, ns.attack_fraction, seed=ns.seed, shift=ns.shift)
            raw.frame.to_csv(ns.output, index=False, lineterminator="\n")
            schema_path = ns.output.rsplit(".", 1)[0] + ".schema.yaml"
            with open(schema_path, "w") as fh:
                yaml.safe_dump(dict(SCHEMA), fh, sort_keys=False)
            print(f"wrote {len(raw)} rows to {ns.output}, schema to {schema_path}")
            return 0
        cfg = load_config(ns.config, _overrides(ns))
        if ns.command == "run":
            pl.run(cfg, force=ns.force)
            if ns.report:
                print(pl.render_report(cfg.out))
            else:
                print(f"artifacts in {cfg.out}")
            return 0
        pipe = pl.Pipeline(cfg)
        with pl._lock(pipe.out):
            status = pipe.run_stage(ns.command, ns.force)
        print(f"{ns.command}: {status}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (pl.StageError, pl.PipelineLocked, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
