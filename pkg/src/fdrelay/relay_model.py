"""Closed-form algebra of the full-duplex filter-and-forward relay channel.

The relay filter ``theta`` sits in a feedback loop with the loop-back
response ``alpha_hat(f) = alpha exp(-j 2 pi tau f)``. Substituting
``xi = theta / (1 - alpha_hat theta)`` removes the loop from every
expression, which is why the optimizers work on ``xi_bar = |xi|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet, FrequencyGrid, SystemConfig, build_grid

__all__ = [
    "SingularLoopError",
    "XI_BAR_MAX",
    "Allocation",
    "RateReport",
    "loopback_response",
    "effective_response",
    "effective_noise_psd",
    "relay_tx_psd",
    "theta_from_xi",
    "xi_from_theta",
    "align_phase",
    "rate_density",
    "rate_density_reformulated",
    "relay_power_density",
    "total_rate",
    "make_allocation",
]

XI_BAR_MAX = 1e12
_SINGULAR_TOL = 1e-12


class SingularLoopError(ArithmeticError):
    """The loop denominator vanishes at some bin (feedback pole on the unit circle)."""


@dataclass(frozen=True)
class LoopbackResponse:
    alpha_hat: np.ndarray


@dataclass
class Allocation:
    """Per-bin source PSD ``p`` (W/Hz), relay amplitude ``xi_bar`` and filter ``theta``."""

    p: np.ndarray
    xi_bar: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.xi_bar = np.asarray(self.xi_bar, dtype=float)
        self.theta = np.asarray(self.theta, dtype=complex)
        if np.any(self.p < 0) or np.any(self.xi_bar < 0):
            raise ValueError("allocation must be nonnegative")


@dataclass
class RateReport:
    rate_bps_hz: float
    rate_density: np.ndarray
    source_power_used: float
    relay_power_used: float
    duality_gap_rel: float = 0.0
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)


def loopback_response(alpha: float, tau: float, grid: FrequencyGrid) -> LoopbackResponse:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"loop-back coefficient must lie in [0, 1), got {alpha}")
    return LoopbackResponse(alpha * np.exp(-2j * np.pi * tau * np.asarray(grid.centers)))


def _ahat(alpha_hat) -> np.ndarray:
    if isinstance(alpha_hat, LoopbackResponse):
        return alpha_hat.alpha_hat
    return np.asarray(alpha_hat, dtype=complex)


def _loop_gain(theta, alpha_hat) -> np.ndarray:
    """theta / (1 - alpha_hat theta), guarded against a vanishing denominator."""
    theta = np.asarray(theta, dtype=complex)
    den = 1.0 - _ahat(alpha_hat) * theta
    if np.any(np.abs(den) < _SINGULAR_TOL):
        raise SingularLoopError("|1 - alpha_hat*theta| below 1e-12")
    return theta / den


def effective_response(h_sd, h_sr, h_rd, theta, alpha_hat) -> np.ndarray:
    return np.asarray(h_sd) + np.asarray(h_rd) * np.asarray(h_sr) * _loop_gain(theta, alpha_hat)


def effective_noise_psd(h_rd, theta, alpha_hat, n0: float) -> np.ndarray:
    return (np.abs(np.asarray(h_rd) * _loop_gain(theta, alpha_hat)) ** 2 + 1.0) * n0


def relay_tx_psd(theta, alpha_hat, h_sr, p, n0: float) -> np.ndarray:
    return np.abs(_loop_gain(theta, alpha_hat)) ** 2 * (np.abs(np.asarray(h_sr)) ** 2 * np.asarray(p) + n0)


def theta_from_xi(xi, alpha_hat) -> np.ndarray:
    xi = np.asarray(xi, dtype=complex)
    den = 1.0 + _ahat(alpha_hat) * xi
    if np.any(np.abs(den) < _SINGULAR_TOL):
        raise SingularLoopError("|1 + alpha_hat*xi| below 1e-12")
    return xi / den


def xi_from_theta(theta, alpha_hat) -> np.ndarray:
    return _loop_gain(theta, alpha_hat)


def align_phase(xi_bar, h_sd, h_sr, h_rd) -> np.ndarray:
    """Give ``xi`` the phase of H_SD conj(H_RD) conj(H_SR) so both paths add coherently.

    Bins where that product vanishes get phase 0.
    """
    xi_bar = np.asarray(xi_bar, dtype=float)
    if np.any(xi_bar < 0):
        raise ValueError("xi_bar must be nonnegative")
    prod = np.asarray(h_sd) * np.conj(h_rd) * np.conj(h_sr)
    mag = np.abs(prod)
    unit = np.where(mag > 0, prod / np.where(mag > 0, mag, 1.0), 1.0)
    return xi_bar * unit


def rate_density(p, theta, channels: ChannelSet, alpha_hat, n0: float) -> np.ndarray:
    """Per-bin rate 0.5 log2(1 + |H_eff|^2 P / noise_eff) through the loop formulas."""
    h = effective_response(channels.h_sd, channels.h_sr, channels.h_rd, theta, alpha_hat)
    noise = effective_noise_psd(channels.h_rd, theta, alpha_hat, n0)
    return 0.5 * np.log2(1.0 + np.abs(h) ** 2 * np.asarray(p, dtype=float) / noise)


def rate_density_reformulated(p, xi_bar, channels: ChannelSet, n0: float) -> np.ndarray:
    """Per-bin rate with the relay phase aligned; no loop-back quantities involved."""
    xb = np.minimum(np.asarray(xi_bar, dtype=float), XI_BAR_MAX)
    a = np.abs(channels.h_sd)
    b = np.abs(channels.h_rd * channels.h_sr)
    c = np.abs(channels.h_rd) ** 2
    snr = (a + b * xb) ** 2 * np.asarray(p, dtype=float) / ((c * xb**2 + 1.0) * n0)
    return 0.5 * np.log2(1.0 + snr)


def relay_power_density(p, xi_bar, channels: ChannelSet, n0: float) -> np.ndarray:
    """Relay transmit PSD xi_bar^2 (|H_SR|^2 P + N0)."""
    return np.asarray(xi_bar, dtype=float) ** 2 * (np.abs(channels.h_sr) ** 2 * np.asarray(p, dtype=float) + n0)


def make_allocation(p, xi_bar, channels: ChannelSet, alpha_hat) -> Allocation:
    """Build an Allocation whose filter is the phase-aligned ``xi`` mapped through the loop."""
    xi = align_phase(xi_bar, channels.h_sd, channels.h_sr, channels.h_rd)
    return Allocation(p=p, xi_bar=xi_bar, theta=theta_from_xi(xi, alpha_hat))


def total_rate(alloc: Allocation, channels: ChannelSet, config: SystemConfig,
               grid: FrequencyGrid | None = None) -> RateReport:
    """Average rate (1/W) sum_k R_k df and the power each node spends."""
    df = config.delta_f
    r = rate_density_reformulated(alloc.p, alloc.xi_bar, channels, config.noise_psd_n0)
    diag = {}
    theta = alloc.theta
    if theta.size and config.loopback_alpha > 0:
        grid = build_grid(config) if grid is None else grid
        ahat = loopback_response(config.loopback_alpha, config.loopback_tau, grid).alpha_hat
        loop = np.abs(ahat * theta)
        diag["max_loop_gain"] = float(loop.max())
        # |alpha_hat theta| >= 1 is allowed by the model but not physically stable
        diag["unstable_loop_bins"] = int(np.count_nonzero(loop >= 1.0))
    return RateReport(
        rate_bps_hz=float(np.sum(r) * df / config.bandwidth_w),
        rate_density=r,
        source_power_used=float(np.sum(alloc.p) * df),
        relay_power_used=float(np.sum(relay_power_density(alloc.p, alloc.xi_bar, channels,
                                                          config.noise_psd_n0)) * df),
        diagnostics=diag,
    )
