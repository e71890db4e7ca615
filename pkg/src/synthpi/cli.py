"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigError, NumericalFailureError, SynthpiError
from .report import parse_config, run, write_outputs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthpi",
        description=(
            "Synthetic control point prediction with non-asymptotic prediction "
            "intervals for treatment effects."
        ),
    )
    parser.add_argument("--config", required=True, help="run configuration file (INI)")
    parser.add_argument("--data", help="panel CSV path (overrides the config)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="simulation seed")
    parser.add_argument("--sims", type=int, help="number of simulation draws")
    parser.add_argument(
        "--constraint",
        action="append",
        help="constraint spec name (repeatable; overrides the config list)",
    )
    parser.add_argument("--joint", action="store_true", help="simultaneous intervals")
    parser.add_argument("--quiet", action="store_true", help="suppress console output")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "data": args.data,
        "out": args.out,
        "seed": args.seed,
        "sims": args.sims,
        "constraint": args.constraint,
        "joint": args.joint,
        "quiet": args.quiet,
    }
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        bundle = run(cfg)
        written = write_outputs(bundle)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SynthpiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if not cfg.quiet:
        for kind, path in written.items():
            print(f"wrote {kind}: {path}")
        for name, (fit_res, unc) in bundle.results.items():
            iv = unc.intervals
            print(
                f"{name}: q={fit_res.q_used!r} df={fit_res.df_hat:.3g} "
                f"active={len(fit_res.active_set)} "
                f"dropped_draws={iv.dropped_draws}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
