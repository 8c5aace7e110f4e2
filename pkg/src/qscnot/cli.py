"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 fit did not converge or reconstruction
failed, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PIPELINES, ConfigError, ExperimentConfig, load_config
from .io import dumps_bundle, export_counts, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qscnot", description="Simulate and analyze the PPBS CNOT experiment.")
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI configuration file")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--gates", type=int, help="gate windows per analyzer setting (overrides run.n_gates)")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--multi-pair-mode", choices=("incoherent", "exact"), help="overrides run.multi_pair_mode")
    return parser


def resolve_config(args) -> ExperimentConfig:
    text = args.config.read_text() if args.config else None
    cfg = load_config(text)
    return cfg.with_overrides(pipeline=args.pipeline, seed=args.seed, n_gates=args.gates,
                              multi_pair_mode=args.multi_pair_mode)


def write_outputs(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(dumps_bundle(result.bundle))
    for name, (header, rows) in result.tables.items():
        write_csv(out / f"{name}.csv", header, rows)
    for label, records in result.records.items():
        export_counts(records, out / f"counts_{label}.csv")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    from .pipelines import run_pipeline
    from .tomography import TomographyError

    try:
        result = run_pipeline(cfg)
    except TomographyError as exc:
        print(f"reconstruction failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    try:
        write_outputs(result, args.out)
    except OSError as exc:
        print(f"cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    if not result.converged:
        print("a fit did not converge; see the fits block in result.json", file=sys.stderr)
        return EXIT_CONVERGENCE
    print(f"wrote {args.out / 'result.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
