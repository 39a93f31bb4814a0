"""Heuristic schemes and the self-interference-cancellation comparison.

All heuristics keep the relay phase aligned and exploit the loop-back path
(their filter is built from ``xi`` exactly like the joint design); they only
differ in which of P and ``xi_bar`` is optimized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, SystemConfig, build_grid
from .dual_solver import (_TIGHT, JointSolution, SolverOptions, joint_optimize, optimize_p_given_xi,
                          optimize_xi_given_p)
from .relay_model import (Allocation, RateReport, align_phase, loopback_response, make_allocation,
                          rate_density_reformulated, total_rate)
from .subproblem import BinCoefficients

__all__ = [
    "SCHEMES",
    "ResidualSiModel",
    "equal_power",
    "source_only",
    "relay_only",
    "conventional_sic",
    "run_scheme",
]

SCHEMES = ("joint", "equal", "source_only", "relay_only", "conventional")


@dataclass(frozen=True)
class ResidualSiModel:
    """White residual self-interference left after cancellation by a factor ``zeta``."""

    zeta: float
    si_psd: float

    @classmethod
    def from_config(cls, config: SystemConfig, zeta: float, alpha: float | None = None) -> "ResidualSiModel":
        if not zeta > 0:
            raise ValueError("zeta must be positive")
        a = config.loopback_alpha if alpha is None else alpha
        return cls(zeta=zeta, si_psd=config.relay_budget_q * a**2 / (config.bandwidth_w * zeta))


def _coeffs(channels, config):
    return BinCoefficients.from_channels(channels, config.noise_psd_n0, config.bandwidth_w)


def _ahat(config, grid=None):
    grid = build_grid(config) if grid is None else grid
    return loopback_response(config.loopback_alpha, config.loopback_tau, grid)


def _equal_xi(channels: ChannelSet, config: SystemConfig, p) -> np.ndarray:
    g = np.abs(channels.h_sr) ** 2
    return np.sqrt(config.relay_budget_q / (config.bandwidth_w * (g * p + config.noise_psd_n0)))


def equal_power(channels: ChannelSet, config: SystemConfig) -> Allocation:
    """Flat source PSD Pbar/W and a relay amplitude that spreads Qbar evenly."""
    n = len(channels)
    p = np.full(n, config.source_budget_p / config.bandwidth_w)
    return make_allocation(p, _equal_xi(channels, config, p), channels, _ahat(config))


def _optimize_p_fixed_xi(channels, config, xi, opts):
    return optimize_p_given_xi(_coeffs(channels, config), xi, config.source_budget_p,
                               config.relay_budget_q, config.delta_f, opts)


def source_only(channels: ChannelSet, config: SystemConfig, refine_xi: bool = False,
                opts: SolverOptions = _TIGHT) -> Allocation:
    """Relay amplitudes from the equal-power rule, source PSD optimized for them.

    ``refine_xi`` recomputes the amplitudes once from the optimized PSD and
    re-optimizes the PSD (sensitivity option; off by default).
    """
    n = len(channels)
    p_eq = np.full(n, config.source_budget_p / config.bandwidth_w)
    xi = _equal_xi(channels, config, p_eq)
    p = _optimize_p_fixed_xi(channels, config, xi, opts)
    if refine_xi:
        xi = _equal_xi(channels, config, p)
        p = _optimize_p_fixed_xi(channels, config, xi, opts)
    return make_allocation(p, xi, channels, _ahat(config))


def relay_only(channels: ChannelSet, config: SystemConfig) -> Allocation:
    """Flat source PSD, relay amplitudes optimized under the relay budget.

    The relay price is found by bisection on the relay power it induces; among
    the feasible candidates (the bisection's feasible end and the equal-power
    amplitudes) the one with the larger rate is returned.
    """
    n = len(channels)
    k = _coeffs(channels, config)
    df = config.delta_f
    qbar = config.relay_budget_q
    p = np.full(n, config.source_budget_p / config.bandwidth_w)
    ahat = _ahat(config)
    if qbar <= 0 or not np.any(p > 0):
        return make_allocation(p, np.zeros(n), channels, ahat)

    xi = optimize_xi_given_p(k, p, qbar, df)
    candidates = [xi, _equal_xi(channels, config, p)]
    rates = [float(np.sum(rate_density_reformulated(p, x, channels, config.noise_psd_n0))) for x in candidates]
    best = candidates[int(np.argmax(rates))]
    return make_allocation(p, best, channels, ahat)


def conventional_sic(channels: ChannelSet, config: SystemConfig, zeta: float,
                     alpha: float | None = None, design: JointSolution | None = None,
                     rescale: bool = False, opts: SolverOptions | None = None) -> RateReport:
    """Rate of a design that cancels the loop-back signal instead of using it.

    The filter is designed as if cancellation were perfect (loop-back set to
    zero, so ``theta = xi``); the rate is then evaluated with residual
    self-interference of PSD ``Qbar alpha^2 / (W zeta)`` added to the relay
    receiver noise. ``alpha`` overrides ``config.loopback_alpha`` (it only
    scales the residual here, so alpha = 1 is admissible). The relay power in
    the report is the actual, inflated one; ``rescale=True`` scales the
    filter back onto the budget instead.
    """
    a = config.loopback_alpha if alpha is None else float(alpha)
    if design is None:
        design = joint_optimize(channels, config.with_(loopback_alpha=0.0), opts)
    si = ResidualSiModel.from_config(config, zeta, a).si_psd
    n0 = config.noise_psd_n0
    df = config.delta_f
    p = design.allocation.p
    theta = align_phase(design.allocation.xi_bar, channels.h_sd, channels.h_sr, channels.h_rd)
    g = np.abs(channels.h_sr) ** 2
    relay_psd = np.abs(theta) ** 2 * (g * p + n0 + si)
    if rescale:
        q = float(np.sum(relay_psd) * df)
        if q > config.relay_budget_q > 0:
            s = math.sqrt(config.relay_budget_q / q)
            theta = theta * s
            relay_psd = relay_psd * s * s
    h = channels.h_sd + channels.h_rd * channels.h_sr * theta
    noise = np.abs(channels.h_rd * theta) ** 2 * (n0 + si) + n0
    r = 0.5 * np.log2(1.0 + np.abs(h) ** 2 * p / noise)
    return RateReport(
        rate_bps_hz=float(np.sum(r) * df / config.bandwidth_w),
        rate_density=r,
        source_power_used=float(np.sum(p) * df),
        relay_power_used=float(np.sum(relay_psd) * df),
        duality_gap_rel=design.report.duality_gap_rel,
        iterations=design.report.iterations,
        diagnostics={"si_psd": si, "zeta": zeta, "alpha": a},
    )


def run_scheme(name: str, channels: ChannelSet, config: SystemConfig,
               opts: SolverOptions | None = None) -> RateReport:
    """Rate report of one heuristic or the joint design (not the SIC baseline)."""
    if name == "joint":
        return joint_optimize(channels, config, opts).report
    if name == "equal":
        alloc = equal_power(channels, config)
    elif name == "source_only":
        alloc = source_only(channels, config)
    elif name == "relay_only":
        alloc = relay_only(channels, config)
    else:
        raise ValueError(f"unknown scheme {name!r}")
    return total_rate(alloc, channels, config)
