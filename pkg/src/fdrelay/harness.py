"""Monte-Carlo experiment driver: rate-vs-budget and rate-vs-loop-gain sweeps.

Every trial draws its channels from ``SeedSequence([seed, trial])`` once and
reuses them for all schemes and sweep values, so comparisons are paired.
Failures of a single solve never abort a sweep; they are recorded in the
``flag`` column.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import conventional_sic, run_scheme
from .channel import PAPER_PROFILE, ChannelSet, SystemConfig, build_grid, dbm_to_w, draw_channels, w_to_dbm
from .dual_solver import SolverOptions, joint_optimize
from .relay_model import align_phase, rate_density, theta_from_xi
from .timesim import LoopCheck, check_fixture, default_fixtures

__all__ = [
    "CSV_HEADER",
    "ExperimentSpec",
    "ResultRow",
    "trial_rng",
    "run_rate_vs_power",
    "run_rate_vs_alpha",
    "run_single_solve",
    "run_verify_lemma1",
    "run_experiment",
    "write_csv",
    "rows_to_csv",
    "mean_by",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("sweep_value", "scheme", "trial", "rate_bps_hz", "source_power_w",
              "relay_power_w", "gap", "iterations", "seed", "flag")
KINDS = ("rate_vs_power", "rate_vs_alpha", "single_solve", "verify_lemma1")
DEFAULT_BUDGETS_DBM = (0.0, 10.0, 20.0, 30.0, 40.0)
DEFAULT_ALPHA2 = tuple(float(v) for v in np.logspace(-4, 0, 9))
DEFAULT_ZETA_DB = (90.0, 120.0)
HEURISTICS = ("joint", "equal", "source_only", "relay_only")


@dataclass
class ExperimentSpec:
    kind: str
    sweep: list
    trials: int = 50
    schemes: list = field(default_factory=lambda: list(HEURISTICS))
    base_config: SystemConfig = PAPER_PROFILE
    zeta_db_list: list = field(default_factory=lambda: list(DEFAULT_ZETA_DB))
    workers: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.sweep) == 0:
            raise ValueError("sweep must be nonempty")
        self.sweep = [float(v) for v in self.sweep]

    @property
    def seed(self) -> int:
        return int(self.base_config.seed)


@dataclass
class ResultRow:
    sweep_value: float
    scheme: str
    trial: int
    rate_bps_hz: float
    source_power_w: float
    relay_power_w: float
    gap: float
    iterations: int
    seed: int
    flag: str = ""

    def key(self):
        return (self.sweep_value, self.scheme, self.trial)

    def as_tuple(self):
        return tuple(getattr(self, k) for k in CSV_HEADER)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def trial_channels(config: SystemConfig, trial: int) -> ChannelSet:
    return draw_channels(config, trial_rng(config.seed, trial))


def _row(value, scheme, trial, report, seed, flag="") -> ResultRow:
    return ResultRow(value, scheme, trial, report.rate_bps_hz, report.source_power_used,
                     report.relay_power_used, report.duality_gap_rel, report.iterations, seed, flag)


def _failed(value, scheme, trial, seed, exc) -> ResultRow:
    log.warning("%s at %g, trial %d failed: %s", scheme, value, trial, exc)
    reason = f"error:{type(exc).__name__}:{exc}".replace(",", ";").replace("\n", " ")
    return ResultRow(value, scheme, trial, math.nan, math.nan, math.nan, math.nan, 0, seed, reason)


def _joint_flag(report) -> str:
    d = report.diagnostics
    if d.get("converged", True):
        return ""
    return f"not_converged:{d.get('stop_reason', 'unknown')}"


# ---------------------------------------------------------------------------
# per-trial work units (module level so they can be sent to worker processes)


def _power_trial(spec: ExperimentSpec, trial: int) -> list[ResultRow]:
    base = spec.base_config
    channels = trial_channels(base, trial)
    rows = []
    for value in spec.sweep:
        cfg = base.with_(source_budget_p=dbm_to_w(value), relay_budget_q=dbm_to_w(value))
        for scheme in spec.schemes:
            try:
                rep = run_scheme(scheme, channels, cfg, spec.solver)
                flag = _joint_flag(rep) if scheme == "joint" else ""
                rows.append(_row(value, scheme, trial, rep, spec.seed, flag))
            except Exception as exc:  # recorded, never fatal
                rows.append(_failed(value, scheme, trial, spec.seed, exc))
    return rows


def fdff_rate_at_alpha(design, channels: ChannelSet, config: SystemConfig, alpha: float):
    """Rate of a fixed joint design when the loop-back amplitude is ``alpha``.

    The relay filter is rebuilt from the designed Xi for this loop-back and
    the rate is evaluated with the loop formulas (not the reformulated
    objective). ``alpha = 1`` lies outside the stable-loop model but the
    formulas remain well defined, so it is evaluated the same way.
    """
    grid = build_grid(config)
    ahat = alpha * np.exp(-2j * np.pi * config.loopback_tau * grid.centers)
    xi = align_phase(design.allocation.xi_bar, channels.h_sd, channels.h_sr, channels.h_rd)
    theta = theta_from_xi(xi, ahat)
    r = rate_density(design.allocation.p, theta, channels, ahat, config.noise_psd_n0)
    rate = float(np.sum(r) * config.delta_f / config.bandwidth_w)
    return rate, float(np.max(np.abs(ahat * theta)))


def _alpha_trial(spec: ExperimentSpec, trial: int) -> list[ResultRow]:
    base = spec.base_config
    channels = trial_channels(base, trial)
    seed = spec.seed
    rows = []
    try:
        design = joint_optimize(channels, base.with_(loopback_alpha=0.0), spec.solver)
    except Exception as exc:
        for value in spec.sweep:
            rows.append(_failed(value, "joint", trial, seed, exc))
            for z in spec.zeta_db_list:
                rows.append(_failed(value, _conv_name(z), trial, seed, exc))
        return rows
    rep = design.report
    for value in spec.sweep:
        alpha = math.sqrt(value)
        if "joint" in spec.schemes:
            try:
                rate, loop = fdff_rate_at_alpha(design, channels, base, alpha)
                flag = _joint_flag(rep) or ("loop_gain_ge_1" if loop >= 1.0 else "")
                rows.append(ResultRow(value, "joint", trial, rate, rep.source_power_used, rep.relay_power_used,
                                      rep.duality_gap_rel, rep.iterations, seed, flag))
            except Exception as exc:
                rows.append(_failed(value, "joint", trial, seed, exc))
        if "conventional" in spec.schemes:
            for z in spec.zeta_db_list:
                try:
                    conv = conventional_sic(channels, base, 10.0 ** (z / 10.0), alpha=alpha, design=design)
                    rows.append(_row(value, _conv_name(z), trial, conv, seed))
                except Exception as exc:
                    rows.append(_failed(value, _conv_name(z), trial, seed, exc))
    return rows


def _conv_name(zeta_db: float) -> str:
    return f"conventional_zeta{zeta_db:g}"


def _map_trials(fn, spec: ExperimentSpec) -> list[ResultRow]:
    trials = range(spec.trials)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(fn, [spec] * spec.trials, trials))
    else:
        chunks = [fn(spec, t) for t in trials]
    rows = [r for c in chunks for r in c]
    order = {v: i for i, v in enumerate(spec.sweep)}
    names = _scheme_order(spec)
    rows.sort(key=lambda r: (order[r.sweep_value], names.index(r.scheme), r.trial))
    return rows


def _scheme_order(spec: ExperimentSpec) -> list[str]:
    out = []
    for s in spec.schemes:
        if s == "conventional":
            out.extend(_conv_name(z) for z in spec.zeta_db_list)
        else:
            out.append(s)
    return out


def run_rate_vs_power(spec: ExperimentSpec) -> list[ResultRow]:
    """Rates of every scheme over budgets ``sweep`` (dBm, with Pbar = Qbar)."""
    bad = [s for s in spec.schemes if s not in HEURISTICS]
    if bad:
        raise ValueError(f"schemes not available for rate_vs_power: {bad}")
    return _map_trials(_power_trial, spec)


def run_rate_vs_alpha(spec: ExperimentSpec) -> list[ResultRow]:
    """Joint and conventional rates over loop-back gains ``sweep`` (alpha^2 values)."""
    bad = [s for s in spec.schemes if s not in ("joint", "conventional")]
    if bad:
        raise ValueError(f"schemes not available for rate_vs_alpha: {bad}")
    if "conventional" in spec.schemes and not spec.zeta_db_list:
        raise ValueError("conventional rows need at least one zeta value")
    if any(not 0.0 <= v <= 1.0 for v in spec.sweep):
        raise ValueError("alpha^2 values must lie in [0, 1]")
    return _map_trials(_alpha_trial, spec)


def run_single_solve(spec: ExperimentSpec) -> list[ResultRow]:
    """Each scheme on one trial at the base configuration's budgets."""
    base = spec.base_config
    channels = trial_channels(base, 0)
    value = w_to_dbm(base.source_budget_p) if base.source_budget_p > 0 else -math.inf
    rows = []
    for scheme in spec.schemes:
        try:
            if scheme == "conventional":
                for z in spec.zeta_db_list:
                    rep = conventional_sic(channels, base, 10.0 ** (z / 10.0), opts=spec.solver)
                    rows.append(_row(value, _conv_name(z), 0, rep, spec.seed))
                continue
            rep = run_scheme(scheme, channels, base, spec.solver)
            rows.append(_row(value, scheme, 0, rep, spec.seed, _joint_flag(rep) if scheme == "joint" else ""))
        except Exception as exc:
            rows.append(_failed(value, scheme, 0, spec.seed, exc))
    return rows


def run_verify_lemma1(seed: int = 7, count: int = 10, **overrides) -> list[LoopCheck]:
    """Compare the simulated loop with the closed-form spectra on the default fixtures.

    ``overrides`` replace Fixture estimation settings (``segment_len``,
    ``num_segments``, ``noise_segment_len``, ``noise_segments``) or the
    scenario warm-up (``warmup``).
    """
    out = []
    warm = overrides.pop("warmup", None)
    for i, fx in enumerate(default_fixtures(seed=seed, count=count)):
        fx = replace(fx, **overrides)
        if warm is not None:
            fx = replace(fx, scenario=replace(fx.scenario, warmup_samples=int(warm)))
        out.append(check_fixture(fx, trial_rng(seed, i)))
    return out


def run_experiment(spec: ExperimentSpec) -> list[ResultRow]:
    if spec.kind == "rate_vs_power":
        return run_rate_vs_power(spec)
    if spec.kind == "rate_vs_alpha":
        return run_rate_vs_alpha(spec)
    if spec.kind == "single_solve":
        return run_single_solve(spec)
    raise ValueError("verify_lemma1 returns a check report; call run_verify_lemma1")


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(v) for v in r.as_tuple()])
    return buf.getvalue()


def write_csv(rows, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


def read_csv(path: str | Path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(ResultRow(float(rec["sweep_value"]), rec["scheme"], int(rec["trial"]),
                                 float(rec["rate_bps_hz"]), float(rec["source_power_w"]),
                                 float(rec["relay_power_w"]), float(rec["gap"]), int(rec["iterations"]),
                                 int(rec["seed"]), rec["flag"]))
    return out


def mean_by(rows) -> dict:
    """Mean rate per (scheme, sweep value), skipping failed rows."""
    acc: dict = {}
    for r in rows:
        if math.isfinite(r.rate_bps_hz):
            acc.setdefault((r.scheme, r.sweep_value), []).append(r.rate_bps_hz)
    return {k: float(np.mean(v)) for k, v in acc.items()}


LEMMA_HEADER = ("fixture", "transfer_median", "transfer_max", "noise_max", "relay_power_rel",
                "max_loop_gain", "num_averages", "passed", "skipped")


def lemma_to_csv(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEMMA_HEADER)
    for c in checks:
        w.writerow([c.label, _fmt(c.transfer_median), _fmt(c.transfer_max), _fmt(c.noise_max),
                    _fmt(c.relay_power_rel), _fmt(c.max_loop_gain), c.num_averages, int(c.passed()), c.skipped])
    return buf.getvalue()
