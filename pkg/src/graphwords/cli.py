"""Command line entry point: ``graphwords {synth,extract,build-dict,signatures,evaluate,run}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import GraphWordsError
from .pipeline import (
    PipelineConfig,
    benchmark_config,
    cmd_build_dict,
    cmd_evaluate,
    cmd_extract,
    cmd_signatures,
    cmd_synth,
)

EXIT_USAGE = 1
EXIT_DATA = 2

log = logging.getLogger("graphwords")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline config (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--manifest", help="dataset manifest (JSON)")
    g.add_argument("--output-dir", help="artifact directory")
    g.add_argument("--n-seeds", type=int)
    g.add_argument("--layers", type=_int_list, help="neighbour counts per layer, e.g. 0,3,6,9")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--iterations", type=int)
    g.add_argument("--distance-flavor", choices=["squared_l2", "l2"])
    g.add_argument("--linkage", choices=["average", "single", "complete"])
    g.add_argument("--first-pass-k", type=int)
    g.add_argument("--dict-sizes", type=_int_list, help="e.g. 50,100,500")
    g.add_argument("--normalization", choices=["l1_normalized", "raw_counts"])
    g.add_argument("--metric", choices=["l1", "l2", "hamming"])
    g.add_argument("--split-fraction", type=float)
    g.add_argument("--rng-seed", type=int)
    g.add_argument("--resplit", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--workers", type=int)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    base = {}
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            base = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"cannot parse config {args.config}: {exc}")
    names = [
        "manifest", "output_dir", "n_seeds", "layers", "alpha", "beta", "iterations",
        "distance_flavor", "linkage", "first_pass_k", "dict_sizes", "normalization", "metric",
        "split_fraction", "rng_seed", "resplit", "workers",
    ]
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            base[name] = value
    try:
        return PipelineConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphwords", description="Nested graph words retrieval pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the bundled synthetic benchmark dataset")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--write-config", type=Path, help="also write a desk-scale pipeline config here")
    p.add_argument("--output-dir", default="out", help="output_dir recorded in the written config")

    p = sub.add_parser("extract", help="build graph features for every image")
    _config_flags(p)

    p = sub.add_parser("build-dict", help="build per-layer codebooks")
    _config_flags(p)
    p.add_argument("--layer", type=int, action="append", help="layer index (repeatable; default all)")
    p.add_argument("--size", type=int, action="append", help="dictionary size (repeatable; default config)")

    p = sub.add_parser("signatures", help="compute image signatures")
    _config_flags(p)

    p = sub.add_parser("evaluate", help="rank and report MAP")
    _config_flags(p)

    p = sub.add_parser("run", help="extract, build-dict, signatures and evaluate in one go")
    _config_flags(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            manifest = cmd_synth(args.out, args.rng_seed)
            print(manifest)
            if args.write_config:
                benchmark_config(manifest.resolve(), args.output_dir, args.rng_seed).save(args.write_config)
            return 0
        cfg = resolve_config(args)
        if args.command == "extract":
            counts = cmd_extract(cfg)
            print(f"extracted {sum(counts.values())} features from {len(counts)} images")
        elif args.command == "build-dict":
            for path in cmd_build_dict(cfg, args.layer, args.size):
                print(path)
        elif args.command == "signatures":
            for path in cmd_signatures(cfg):
                print(path)
        elif args.command in ("evaluate", "run"):
            if args.command == "run":
                cmd_extract(cfg)
                cmd_build_dict(cfg)
                cmd_signatures(cfg)
            for rep in cmd_evaluate(cfg):
                layers = "+".join(str(l) for l in rep.config["layers"])
                print(f"size={rep.config['dict_size']:>5} layers={layers:<8} MAP={rep.overall_mean:.4f}")
    except UsageError as exc:
        print(f"graphwords: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphWordsError, OSError, ValueError) as exc:
        print(f"graphwords: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
