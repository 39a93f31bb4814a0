"""Command-line entry point: ``fdrelay {solve,fig2,fig3,verify-lemma1}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .channel import DESK_PROFILE, PAPER_PROFILE, load_config
from .harness import (DEFAULT_ALPHA2, DEFAULT_BUDGETS_DBM, DEFAULT_ZETA_DB, HEURISTICS, ExperimentSpec,
                      lemma_to_csv, rows_to_csv, run_experiment, run_verify_lemma1)

PROFILES = {"desk": DESK_PROFILE, "paper": PAPER_PROFILE}
_INT_EXTRAS = ("segment_len", "num_segments", "noise_segment_len", "noise_segments", "warmup")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value file overriding the profile")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--trials", type=int, help="Monte-Carlo trials (default 50)")
    common.add_argument("--out", type=Path, help="CSV output path (default: stdout)")
    common.add_argument("--schemes", type=_names, help="comma-separated scheme list")
    common.add_argument("--zeta-db", type=_floats, help="comma-separated residual SI reductions in dB")
    common.add_argument("--sweep", type=_floats, help="comma-separated sweep values")
    common.add_argument("--workers", type=int, default=1, help="worker processes for trials")
    common.add_argument("--plot", action="store_true", help="also write a PNG next to --out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fdrelay", description="Full-duplex filter-and-forward relay experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="all schemes on one channel draw")
    sub.add_parser("fig2", parents=[common], help="rate versus power budget (Pbar = Qbar, dBm)")
    sub.add_parser("fig3", parents=[common], help="rate versus loop-back gain alpha^2")
    sub.add_parser("verify-lemma1", parents=[common], help="time-domain check of the loop formulas")
    return parser


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    base = PROFILES[args.profile]
    extra = {}
    if args.config is not None:
        base, extra = load_config(args.config, base)
    if args.seed is not None:
        base = base.with_(seed=args.seed)
    trials = args.trials if args.trials is not None else int(extra.get("trials", 50))

    if args.command == "verify-lemma1":
        overrides = {k: int(extra[k]) for k in _INT_EXTRAS if k in extra}
        checks = run_verify_lemma1(seed=base.seed if args.seed is not None else 7, **overrides)
        _emit(lemma_to_csv(checks), args.out)
        return 0 if all(c.passed() for c in checks) else 1

    zetas = args.zeta_db or (_floats(extra["zeta_db"]) if "zeta_db" in extra else list(DEFAULT_ZETA_DB))
    schemes = args.schemes or (_names(extra["schemes"]) if "schemes" in extra else None)
    sweep = args.sweep or (_floats(extra["sweep"]) if "sweep" in extra else None)
    if args.command == "fig2":
        kind, sweep, schemes = "rate_vs_power", sweep or list(DEFAULT_BUDGETS_DBM), schemes or list(HEURISTICS)
    elif args.command == "fig3":
        kind, sweep, schemes = "rate_vs_alpha", sweep or list(DEFAULT_ALPHA2), schemes or ["joint", "conventional"]
        base = base.with_(loopback_alpha=0.0)
    else:
        kind, sweep, trials = "single_solve", [0.0], 1
        schemes = schemes or list(HEURISTICS) + ["conventional"]
    spec = ExperimentSpec(kind=kind, sweep=sweep, trials=trials, schemes=schemes, base_config=base,
                          zeta_db_list=zetas, workers=args.workers)
    rows = run_experiment(spec)
    _emit(rows_to_csv(rows), args.out)
    if args.plot:
        if args.out is None:
            print("--plot needs --out", file=sys.stderr)
            return 2
        from . import plotting

        png = args.out.with_suffix(".png")
        if kind == "rate_vs_power":
            plotting.plot_rate_vs_power(rows, png)
        elif kind == "rate_vs_alpha":
            plotting.plot_rate_vs_alpha(rows, png)
    return 0


if __name__ == "__main__":
    sys.exit(main())
