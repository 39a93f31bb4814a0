"""Lagrange-dual joint optimization of the source PSD and the relay filter.

The dual function ``Upsilon(mu, lam)`` is evaluated bin by bin
(:mod:`fdrelay.subproblem`) and minimized over the two prices with a
central/deep-cut ellipsoid method. Every evaluated center also yields a
feasible primal point (after :func:`recover_primal`), so the gap between the
two is a certificate of optimality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, FrequencyGrid, SystemConfig, build_grid
from .relay_model import Allocation, RateReport, loopback_response, make_allocation, total_rate
from .subproblem import (EPS_DUAL, BinCoefficients, BinSolution, chi, solve_bin_lagrangian,
                         solve_relay_given_p)

__all__ = [
    "DualPoint",
    "EllipsoidState",
    "SolverOptions",
    "JointSolution",
    "dual_value",
    "recover_primal",
    "ellipsoid_minimize",
    "joint_optimize",
    "run_ellipsoid",
    "water_fill_mu",
    "optimize_p_given_xi",
    "optimize_xi_given_p",
    "polish",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DualPoint:
    mu: float
    lam: float


@dataclass
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0

    def is_positive_definite(self) -> bool:
        a = self.shape
        return bool(a[0, 0] > 0 and a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] > 0)


@dataclass
class SolverOptions:
    gap_tol: float = 1e-4
    cs_tol: float = 1e-7  # complementary-slackness residual, relative to the rate
    max_iter: int = 400
    radius_scale: float = 1.0
    volume_tol: float = 1e-24
    restart_bins: int = 16  # single-bin restarts tried when the dual bound is far from closed
    restart_gap: float = 1e-2  # ... i.e. when the relative gap after polishing exceeds this


@dataclass
class JointSolution:
    allocation: Allocation
    duals: DualPoint
    report: RateReport


def _coeffs(channels: ChannelSet, config: SystemConfig) -> BinCoefficients:
    return BinCoefficients.from_channels(channels, config.noise_psd_n0, config.bandwidth_w)


def _relay_power(p, xi, coeffs: BinCoefficients, df: float) -> float:
    return float(np.sum(xi**2 * (coeffs.g * p + coeffs.n0)) * df)


def dual_value(duals: DualPoint, channels: ChannelSet, config: SystemConfig,
               coeffs: BinCoefficients | None = None):
    """Return ``(Upsilon(mu, lam), subgradient, per-bin solutions)``.

    Raises ValueError for nonpositive ``mu`` or negative ``lam``; callers
    handle those with feasibility cuts.
    """
    if not duals.mu > 0 or duals.lam < 0:
        raise ValueError("dual evaluation needs mu > 0 and lam >= 0")
    k = _coeffs(channels, config) if coeffs is None else coeffs
    df = config.delta_f
    sol = solve_bin_lagrangian(k, duals.mu, duals.lam)
    value = float(np.sum(sol.value) * df + duals.mu * config.source_budget_p + duals.lam * config.relay_budget_q)
    sub = np.array([
        config.source_budget_p - float(np.sum(sol.p_star) * df),
        config.relay_budget_q - _relay_power(sol.p_star, sol.xi_star, k, df),
    ])
    return value, sub, sol


def recover_primal(duals: DualPoint, sol: BinSolution, channels: ChannelSet, config: SystemConfig,
                   coeffs: BinCoefficients | None = None, grid: FrequencyGrid | None = None):
    """Assemble an Allocation from per-bin solutions, restoring feasibility if needed.

    When the source budget is exceeded by more than 1e-9 relative, P is scaled
    down uniformly and the relay amplitudes are re-solved at the same relay
    price; any remaining relay excess is removed by scaling ``xi_bar``.
    Returns ``(allocation, diagnostics)``.
    """
    k = _coeffs(channels, config) if coeffs is None else coeffs
    df = config.delta_f
    pbar, qbar = config.source_budget_p, config.relay_budget_q
    p = np.asarray(sol.p_star, dtype=float).copy()
    xi = np.asarray(sol.xi_star, dtype=float).copy()
    diag = {"p_scaled": 1.0, "xi_resolved": False, "xi_scaled": 1.0}

    used = float(np.sum(p) * df)
    if used > pbar * (1.0 + 1e-9):
        s = pbar / used
        p *= s
        diag["p_scaled"] = s
        xi, _ = solve_relay_given_p(k, p, max(duals.lam, EPS_DUAL))
        diag["xi_resolved"] = True
    q_used = _relay_power(p, xi, k, df)
    if q_used > qbar * (1.0 + 1e-9):
        s = math.sqrt(qbar / q_used) if qbar > 0 else 0.0
        xi *= s
        diag["xi_scaled"] = s
    grid = build_grid(config) if grid is None else grid
    ahat = loopback_response(config.loopback_alpha, config.loopback_tau, grid)
    return make_allocation(p, xi, channels, ahat), diag


def _ellipsoid_step(state: EllipsoidState, a: np.ndarray, depth: float) -> EllipsoidState:
    """Cut keeping {z : a.(z - center) <= -depth * sqrt(a' A a)}; 0 <= depth < 1."""
    n = 2
    A = state.shape
    Aa = A @ a
    denom = math.sqrt(float(a @ Aa))
    g = Aa / denom
    center = state.center - (1.0 + n * depth) / (n + 1.0) * g
    shape = (n * n / (n * n - 1.0)) * (1.0 - depth**2) * (
        A - 2.0 * (1.0 + n * depth) / ((n + 1.0) * (1.0 + depth)) * np.outer(g, g))
    shape = 0.5 * (shape + shape.T)
    return EllipsoidState(center, shape, state.iteration + 1)


@dataclass
class _Record:
    gap: float = math.inf
    dual: float = math.inf
    primal: float = -math.inf
    z: np.ndarray | None = None
    payload: object = None
    cs: float = math.inf


@dataclass
class EllipsoidResult:
    record: _Record
    state: EllipsoidState
    iterations: int
    converged: bool
    reason: str
    history: list = field(default_factory=list)


def run_ellipsoid(evaluate, state: EllipsoidState, budgets: tuple[float, float],
                  opts: SolverOptions) -> EllipsoidResult:
    """Minimize a convex dual function over the open positive quadrant.

    ``evaluate(z)`` returns ``(dual, subgradient, primal, cs_residual, payload)``
    where ``primal`` is the rate of a feasible allocation recovered at ``z``.
    Besides subgradient cuts, centers outside the quadrant get coordinate
    cuts and centers with ``mu Pbar + lam Qbar`` above the best dual value
    get a cut on that bound (the optimum satisfies it since the bin values are
    nonnegative).
    """
    pbar, qbar = budgets
    bound_dir = np.array([pbar, qbar])
    vol0 = math.sqrt(abs(np.linalg.det(state.shape)))
    rec = _Record()
    best_dual = math.inf
    history = []
    reason = "max_iter"
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        z = state.center
        if z[0] <= 0:
            a = np.array([-1.0, 0.0])
            depth = -z[0] / math.sqrt(state.shape[0, 0])
        elif z[1] <= 0:
            a = np.array([0.0, -1.0])
            depth = -z[1] / math.sqrt(state.shape[1, 1])
        elif bound_dir @ z > best_dual:
            a = bound_dir
            depth = (bound_dir @ z - best_dual) / math.sqrt(float(a @ state.shape @ a))
        else:
            dual, sub, primal, cs, payload = evaluate(z)
            best_dual = min(best_dual, dual)
            gap = dual - primal
            history.append((float(z[0]), float(z[1]), dual, primal))
            if gap < rec.gap:
                rec = _Record(gap, dual, primal, z.copy(), payload, cs)
            scale = max(abs(rec.primal), 1e-300)
            if rec.gap <= opts.gap_tol * scale and rec.cs <= opts.cs_tol * scale:
                converged, reason = True, "gap"
                break
            a = np.asarray(sub, dtype=float)
            if not np.any(a):
                converged, reason = True, "zero_subgradient"
                break
            depth = (dual - best_dual) / math.sqrt(float(a @ state.shape @ a))
        if depth >= 1.0:
            reason = "empty_ellipsoid"
            break
        state = _ellipsoid_step(state, a, max(depth, 0.0))
        vol = math.sqrt(abs(np.linalg.det(state.shape)))
        if vol < opts.volume_tol * vol0:
            reason = "volume"
            break
    return EllipsoidResult(rec, state, it, converged, reason, history)


def _initial_state(evaluate_dual, z0, budgets, radius_scale: float) -> EllipsoidState:
    """Axis-aligned ellipse through the corners of {0 <= mu Pbar, lam Qbar <= U}."""
    u = evaluate_dual(z0)
    pbar, qbar = budgets
    half = np.array([u / (2.0 * pbar), u / (2.0 * qbar)])
    axes = math.sqrt(2.0) * half * radius_scale
    return EllipsoidState(center=half.copy(), shape=np.diag(axes**2))


def water_fill_mu(p_used, budget: float, mu_hi: float, iters: int = 200) -> float:
    """Bisection (in log mu) for the price at which ``p_used(mu)`` meets ``budget``.

    ``p_used`` must be nonincreasing in ``mu``; returns the smallest price
    whose allocation is within budget, so the result is always feasible.
    """
    lo, hi = math.log(mu_hi) - 80.0, math.log(mu_hi)
    if p_used(math.exp(lo)) <= budget:
        return math.exp(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if p_used(math.exp(mid)) > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return math.exp(hi)


def _report(alloc: Allocation, channels: ChannelSet, config: SystemConfig, gap: float,
            iterations: int, diag: dict, grid=None) -> RateReport:
    rep = total_rate(alloc, channels, config, grid)
    rep.duality_gap_rel = gap
    rep.iterations = iterations
    rep.diagnostics.update(diag)
    return rep


def _zero_solution(channels, config, grid, reason):
    n = len(channels)
    ahat = loopback_response(config.loopback_alpha, config.loopback_tau, grid)
    alloc = make_allocation(np.zeros(n), np.zeros(n), channels, ahat)
    return JointSolution(alloc, DualPoint(0.0, 0.0), _report(alloc, channels, config, 0.0, 0, {"reason": reason}, grid))


def _single_constraint(channels, config, grid, k, lam_zero: bool) -> JointSolution:
    """Relay off (Qbar = 0) or relay unconstrained (Qbar = inf): one price only."""
    df = config.delta_f
    if lam_zero:
        def solve(mu):
            return solve_bin_lagrangian(k, mu, 0.0)
        gmax = float(np.max((k.a**2 + np.where(k.c > 0, k.b**2 / np.where(k.c > 0, k.c, 1.0), 0.0)) / k.n0))
    else:
        def solve(mu):
            p = np.maximum(0.0, 1.0 / (k.kappa * mu) - k.n0 / np.where(k.a > 0, k.a**2, np.nan))
            p = np.nan_to_num(p, nan=0.0)
            return BinSolution(p, np.zeros_like(p), np.zeros_like(p))
        gmax = float(np.max(k.a**2 / k.n0))
    if gmax <= 0:
        return _zero_solution(channels, config, grid, "no_gain")
    mu_hi = gmax / k.kappa * 2.0
    mu = water_fill_mu(lambda m: float(np.sum(solve(m).p_star) * df), config.source_budget_p, mu_hi)
    sol = solve(mu)
    p = sol.p_star
    xi = sol.xi_star
    ahat = loopback_response(config.loopback_alpha, config.loopback_tau, grid)
    alloc = make_allocation(p, xi, channels, ahat)
    rep = total_rate(alloc, channels, config, grid)
    # source price and rate pin down the dual value exactly here
    dual = float(np.sum(_rate_reform(p, xi, k) / k.w - mu * p) * df + mu * config.source_budget_p)
    gap = (dual - rep.rate_bps_hz) / max(rep.rate_bps_hz, 1e-300)
    rep.duality_gap_rel = gap
    rep.diagnostics["mode"] = "relay_unconstrained" if lam_zero else "relay_off"
    return JointSolution(alloc, DualPoint(mu, 0.0 if lam_zero else math.inf), rep)


def ellipsoid_minimize(channels: ChannelSet, config: SystemConfig,
                       opts: SolverOptions | None = None) -> JointSolution:
    """Jointly optimal source PSD and relay filter for one channel realization."""
    opts = SolverOptions() if opts is None else opts
    grid = build_grid(config)
    k = _coeffs(channels, config)
    pbar, qbar = config.source_budget_p, config.relay_budget_q
    df = config.delta_f
    if pbar <= 0:
        return _zero_solution(channels, config, grid, "no_source_power")
    if qbar <= 0 or math.isinf(qbar):
        return _single_constraint(channels, config, grid, k, lam_zero=math.isinf(qbar))

    def evaluate(z):
        duals = DualPoint(float(z[0]), float(z[1]))
        dual, sub, sol = dual_value(duals, channels, config, k)
        alloc, diag = recover_primal(duals, sol, channels, config, k, grid)
        rate = float(np.sum(_rate_reform(alloc.p, alloc.xi_bar, k)) * df / config.bandwidth_w)
        s_used = float(np.sum(alloc.p) * df)
        q_used = _relay_power(alloc.p, alloc.xi_bar, k, df)
        cs = max(duals.mu * (pbar - s_used), duals.lam * (qbar - q_used))
        return dual, sub, rate, cs, (duals, alloc, diag)

    # equal-power marginal value of source power gives the starting price
    p_eq = pbar / config.bandwidth_w
    gain0 = k.a**2 / k.n0
    mu0 = float(np.mean(gain0 / (1.0 + gain0 * p_eq))) / k.kappa
    mu0 = mu0 if mu0 > 0 else 1.0 / (k.kappa * p_eq)
    z0 = np.array([mu0, mu0 * pbar / qbar])
    state = _initial_state(lambda z: evaluate(z)[0], z0, (pbar, qbar), opts.radius_scale)
    res = run_ellipsoid(evaluate, state, (pbar, qbar), opts)
    rec = res.record
    duals, alloc, diag = rec.payload
    converged, reason, cs, primal = res.converged, res.reason, rec.cs, rec.primal
    if not converged:
        # nonsmooth dual near the optimum: improve the recovered point directly
        p, xi, primal = polish(alloc.p, alloc.xi_bar, k, config, rate=rec.primal,
                               target=rec.dual * (1.0 - opts.gap_tol))
        won = -1
        if rec.dual - primal > opts.restart_gap * max(abs(primal), 1e-300):
            p, xi, primal, won = _restarts(p, xi, primal, k, config, opts.restart_bins,
                                           target=rec.dual * (1.0 - opts.gap_tol))
        alloc = make_allocation(p, xi, channels, loopback_response(config.loopback_alpha,
                                                                   config.loopback_tau, grid))
        cs = max(duals.mu * (pbar - float(np.sum(p) * df)),
                 duals.lam * (qbar - _relay_power(p, xi, k, df)))
        scale = max(abs(primal), 1e-300)
        if rec.dual - primal <= opts.gap_tol * scale and cs <= opts.cs_tol * scale:
            converged, reason = True, reason + "+polish"
        diag = dict(diag, polished=True, restart_bin=won)
    gap = (rec.dual - primal) / max(abs(primal), 1e-300)
    diag = dict(diag, converged=converged, stop_reason=reason, cs_residual=cs, dual_value=rec.dual)
    if not converged:
        log.warning("ellipsoid stopped (%s) with relative gap %.3g", reason, gap)
    return JointSolution(alloc, duals, _report(alloc, channels, config, gap, res.iterations, diag, grid))


def joint_optimize(channels: ChannelSet, config: SystemConfig, opts: SolverOptions | None = None) -> JointSolution:
    return ellipsoid_minimize(channels, config, opts)


def _rate_reform(p, xi, k: BinCoefficients):
    return 0.5 * np.log2(1.0 + (k.a + k.b * xi) ** 2 * p / ((k.c * xi**2 + 1.0) * k.n0))



# ---------------------------------------------------------------------------
# block-coordinate subproblems (shared with the heuristic baselines)

_TIGHT = SolverOptions(gap_tol=1e-12, cs_tol=1e-12, max_iter=1500, volume_tol=1e-60)


def optimize_p_given_xi(k: BinCoefficients, xi, pbar: float, qbar: float, df: float,
                        opts: SolverOptions = _TIGHT) -> np.ndarray:
    """Best source PSD for fixed relay amplitudes.

    A concave program with the source budget and the relay budget
    ``sum xi^2 (g p + N0) df <= qbar``; solved through its two prices with
    the ellipsoid method (or a water-filling bisection when the relay budget
    does not bind).
    """
    xi = np.asarray(xi, dtype=float)
    w = float(k.w)
    qbar_eff = qbar - float(np.sum(xi**2 * k.n0) * df)
    if qbar_eff < -1e-12 * max(qbar, 1e-300):
        raise ValueError("relay budget cannot even cover the forwarded noise")
    gain = (k.a + k.b * xi) ** 2 / ((k.c * xi**2 + 1.0) * k.n0)
    gx = xi**2 * k.g
    if pbar <= 0 or not np.any(gain > 0):
        return np.zeros_like(xi)

    def rate(p):
        return float(np.sum(np.log2(1.0 + gain * p)) * df / (2.0 * w))

    def fit(p):
        s_used = float(np.sum(p) * df)
        q_used = float(np.sum(gx * p) * df)
        s = 1.0
        if s_used > pbar:
            s = pbar / s_used
        if q_used * s > max(qbar_eff, 0.0):
            s = max(qbar_eff, 0.0) / q_used
        return p * s

    def p_at(mu, mask):
        p = chi(xi, k, mu, 0.0)
        p[mask] = 0.0
        return p

    def fill(mask):
        mu_hi = 2.0 * float(np.max(gain)) / k.kappa
        mu = water_fill_mu(lambda m: float(np.sum(p_at(m, mask)) * df), pbar, mu_hi)
        return p_at(mu, mask)

    if qbar_eff <= 0 or not np.any(gx > 0):
        return fill(gx > 0 if qbar_eff <= 0 else np.zeros_like(xi, dtype=bool))
    p_free = fill(np.zeros_like(xi, dtype=bool))
    if float(np.sum(gx * p_free) * df) <= qbar_eff:
        return p_free

    def evaluate(z):
        mu, lam = float(z[0]), float(z[1])
        p = chi(xi, k, mu, lam)
        lagr = rate(p) - float(np.sum((mu + lam * gx) * p) * df)
        dual = lagr + mu * pbar + lam * qbar_eff
        sub = np.array([pbar - float(np.sum(p) * df), qbar_eff - float(np.sum(gx * p) * df)])
        pf = fit(p)
        cs = max(mu * (pbar - float(np.sum(pf) * df)), lam * (qbar_eff - float(np.sum(gx * pf) * df)))
        return dual, sub, rate(pf), cs, pf

    p_eq = pbar / w
    mu0 = float(np.mean(gain / (1.0 + gain * p_eq))) / k.kappa
    u = evaluate(np.array([mu0, mu0 * pbar / qbar_eff]))[0]
    half = np.array([u / (2.0 * pbar), u / (2.0 * qbar_eff)])
    state = EllipsoidState(half.copy(), np.diag((math.sqrt(2.0) * half * opts.radius_scale) ** 2))
    res = run_ellipsoid(evaluate, state, (pbar, qbar_eff), opts)
    return res.record.payload


def optimize_xi_given_p(k: BinCoefficients, p, qbar: float, df: float, rtol: float = 1e-10) -> np.ndarray:
    """Best relay amplitudes for a fixed source PSD under the relay budget.

    The relay price is found by bisection (in log) on the relay power it
    induces, until the feasible end of the bracket uses the budget to
    ``rtol``; that end is returned.
    """
    p = np.asarray(p, dtype=float)
    if qbar <= 0 or not np.any(p > 0):
        return np.zeros_like(p)

    def used(lam):
        xi, _ = solve_relay_given_p(k, p, lam)
        return float(np.sum(xi**2 * (k.g * p + k.n0)) * df), xi

    q0, xi0 = used(0.0)
    if q0 <= qbar:
        return xi0
    lo = hi = math.log(1.0 / (qbar * k.kappa))
    while used(math.exp(hi))[0] > qbar:
        hi += 2.0
    while used(math.exp(lo))[0] <= qbar:
        lo -= 2.0
    q_hi, xi_hi = used(math.exp(hi))
    for _ in range(200):
        if q_hi >= qbar * (1.0 - rtol) or hi - lo < 1e-14:
            break
        mid = 0.5 * (lo + hi)
        q_mid, xi_mid = used(math.exp(mid))
        if q_mid > qbar:
            lo = mid
        else:
            hi, q_hi, xi_hi = mid, q_mid, xi_mid
    return xi_hi


def polish(p, xi, k: BinCoefficients, config: SystemConfig, rate: float | None = None,
           target: float = math.inf, rounds: int = 4):
    """Alternate the two block problems from a feasible point; never lowers the rate.

    Stops after ``rounds`` or once the rate reaches ``target``. Returns
    ``(p, xi, rate)``.
    """
    df, w = config.delta_f, config.bandwidth_w
    pbar, qbar = config.source_budget_p, config.relay_budget_q

    def value(pp, xx):
        return float(np.sum(_rate_reform(pp, xx, k)) * df / w)

    best = (np.asarray(p, float), np.asarray(xi, float))
    best_rate = value(*best) if rate is None else rate
    for _ in range(rounds):
        if best_rate >= target:
            break
        before = best_rate
        p_new = optimize_p_given_xi(k, best[1], pbar, qbar, df)
        r = value(p_new, best[1])
        if r > best_rate:
            best, best_rate = (p_new, best[1]), r
        xi_new = optimize_xi_given_p(k, best[0], qbar, df)
        r = value(best[0], xi_new)
        if r > best_rate and _relay_power(best[0], xi_new, k, df) <= qbar * (1.0 + 1e-12):
            best, best_rate = (best[0], xi_new), r
        if best_rate - before <= 1e-12 * abs(best_rate):
            break
    return best[0], best[1], best_rate


def _restarts(p, xi, rate, k: BinCoefficients, config: SystemConfig, count: int, target: float = math.inf):
    """Block ascent from single-bin starts; keeps the best feasible point.

    With few bins the dual bound need not be tight and dual recovery can pick
    the wrong support (all power on the best direct bin while a relayed bin
    is worth more). Each of the ``count`` bins with the largest gain bound
    ``(a^2 + b^2/c)/N0`` gets the whole source budget and the relay
    amplitude that the relay budget allows, then is polished. Returns
    ``(p, xi, rate, bin)`` where ``bin`` is the winning restart or -1.
    """
    n = np.size(k.a)
    if count <= 0 or rate >= target:
        return p, xi, rate, -1
    df = config.delta_f
    bound = (k.a**2 + np.where(k.c > 0, k.b**2 / np.where(k.c > 0, k.c, 1.0), 0.0)) / k.n0
    order = np.argsort(-np.broadcast_to(bound, (n,)), kind="stable")[:count]
    won = -1
    for i in order:
        p0 = np.zeros(n)
        p0[i] = config.source_budget_p / df
        xi0 = optimize_xi_given_p(k, p0, config.relay_budget_q, df)
        pc, xc, rc = polish(p0, xi0, k, config, rounds=8, target=target)
        if rc > rate:
            p, xi, rate, won = pc, xc, rc, int(i)
        if rate >= target:
            break
    return p, xi, rate, won

