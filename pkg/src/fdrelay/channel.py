"""Frequency grid, random multi-tap channels and unit conversions.

All internal quantities are linear (W, W/Hz); dB values only appear at the
configuration boundary.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "SystemConfig",
    "FrequencyGrid",
    "TapVector",
    "ChannelSet",
    "build_grid",
    "sample_taps",
    "response_on_grid",
    "draw_channels",
    "dbm_to_w",
    "dbm_per_hz_to_w_per_hz",
    "w_to_dbm",
    "load_config",
    "config_from_mapping",
    "PAPER_PROFILE",
    "DESK_PROFILE",
]


def dbm_to_w(x):
    """Convert dBm to W."""
    if np.ndim(x):
        return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)
    return 10.0 ** ((float(x) - 30.0) / 10.0)


def dbm_per_hz_to_w_per_hz(x):
    """Convert dBm/Hz to W/Hz."""
    return dbm_to_w(x)


def w_to_dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters and budgets of one relay link.

    Power budgets are in W, the noise PSD in W/Hz. ``loopback_alpha`` is the
    loop-back amplitude and ``loopback_tau`` its delay in seconds.
    """

    bandwidth_w: float = 10.24e6
    center_freq: float = 0.0
    num_subchannels: int = 1024
    noise_psd_n0: float = 10.0 ** (-17.5)
    source_budget_p: float = 1.0
    relay_budget_q: float = 1.0
    loopback_alpha: float = 0.0
    loopback_tau: float = 0.0
    seed: int = 0
    taps_sd: int = 8
    taps_sr: int = 8
    taps_rd: int = 8
    tap_var_db_sd: float = -110.0
    tap_var_db_sr: float = -100.0
    tap_var_db_rd: float = -100.0
    tap_spacing: float | None = None  # None -> 1/W

    def __post_init__(self):
        if not self.bandwidth_w > 0:
            raise ValueError("bandwidth_w must be positive")
        if int(self.num_subchannels) < 1:
            raise ValueError("num_subchannels must be >= 1")
        if not self.noise_psd_n0 > 0:
            raise ValueError("noise_psd_n0 must be positive")
        if self.source_budget_p < 0 or self.relay_budget_q < 0:
            raise ValueError("power budgets must be nonnegative")
        if not 0.0 <= self.loopback_alpha < 1.0:
            raise ValueError("loopback_alpha must lie in [0, 1)")
        if self.loopback_tau < 0:
            raise ValueError("loopback_tau must be nonnegative")
        if min(self.taps_sd, self.taps_sr, self.taps_rd) < 1:
            raise ValueError("every channel needs at least one tap")

    @property
    def delta_f(self) -> float:
        return self.bandwidth_w / self.num_subchannels

    @property
    def effective_tap_spacing(self) -> float:
        return self.tap_spacing if self.tap_spacing is not None else 1.0 / self.bandwidth_w

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


# Full-scale reference parameter set and the faster desk-scale variant.
PAPER_PROFILE = SystemConfig(
    bandwidth_w=10.24e6,
    num_subchannels=1024,
    noise_psd_n0=dbm_per_hz_to_w_per_hz(-145.0),
    source_budget_p=dbm_to_w(30.0),
    relay_budget_q=dbm_to_w(30.0),
)
DESK_PROFILE = replace(PAPER_PROFILE, num_subchannels=256)


@dataclass(frozen=True)
class FrequencyGrid:
    centers: np.ndarray
    delta_f: float

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def bandwidth(self) -> float:
        return self.delta_f * len(self.centers)


@dataclass(frozen=True)
class TapVector:
    taps: np.ndarray
    tap_spacing: float

    def __post_init__(self):
        taps = np.atleast_1d(np.asarray(self.taps, dtype=complex))
        if taps.size < 1 or not np.all(np.isfinite(taps)):
            raise ValueError("taps must be a nonempty finite vector")
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class ChannelSet:
    h_sd: np.ndarray
    h_sr: np.ndarray
    h_rd: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(h, dtype=complex)) for h in (self.h_sd, self.h_sr, self.h_rd)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise ValueError("channel responses must share one grid length")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValueError("channel responses must be finite")
        for name, a in zip(("h_sd", "h_sr", "h_rd"), arrs):
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return self.h_sd.size


def build_grid(config: SystemConfig) -> FrequencyGrid:
    """Split the band into ``num_subchannels`` equal bins and return the centers."""
    n = int(config.num_subchannels)
    df = config.bandwidth_w / n
    start = config.center_freq - config.bandwidth_w / 2.0 + df / 2.0
    return FrequencyGrid(centers=start + df * np.arange(n), delta_f=df)


def sample_taps(num_taps: int, variance_db: float, rng: np.random.Generator,
                tap_spacing: float = 1.0) -> TapVector:
    """Draw circularly-symmetric complex Gaussian taps with total variance 10^(dB/10).

    ``variance_db = -inf`` yields an all-zero tap vector.
    """
    if num_taps < 1:
        raise ValueError("num_taps must be >= 1")
    var = 0.0 if variance_db == -math.inf else 10.0 ** (variance_db / 10.0)
    z = rng.standard_normal((num_taps, 2))
    taps = math.sqrt(var / 2.0) * (z[:, 0] + 1j * z[:, 1])
    return TapVector(taps=taps, tap_spacing=tap_spacing)


def response_on_grid(taps: TapVector, grid: FrequencyGrid) -> np.ndarray:
    """Evaluate sum_m taps[m] exp(-j 2 pi f m t_s) at every bin center."""
    m = np.arange(taps.taps.size)
    phase = np.exp(-2j * np.pi * np.outer(grid.centers, m) * taps.tap_spacing)
    return phase @ taps.taps


def draw_channels(config: SystemConfig, rng: np.random.Generator,
                  grid: FrequencyGrid | None = None) -> ChannelSet:
    """Draw h_SD, h_SR, h_RD (in that order) from ``rng`` and sample them on the grid."""
    grid = build_grid(config) if grid is None else grid
    ts = config.effective_tap_spacing
    out = []
    for n, v in ((config.taps_sd, config.tap_var_db_sd),
                 (config.taps_sr, config.tap_var_db_sr),
                 (config.taps_rd, config.tap_var_db_rd)):
        out.append(response_on_grid(sample_taps(n, v, rng, ts), grid))
    return ChannelSet(*out)


# -- config files ----------------------------------------------------------

# file key -> (field, converter)
_KEYS = {
    "bandwidth_hz": ("bandwidth_w", float),
    "center_freq_hz": ("center_freq", float),
    "num_subchannels": ("num_subchannels", int),
    "noise_psd_dbm_hz": ("noise_psd_n0", lambda s: dbm_per_hz_to_w_per_hz(float(s))),
    "source_power_dbm": ("source_budget_p", lambda s: dbm_to_w(float(s))),
    "relay_power_dbm": ("relay_budget_q", lambda s: dbm_to_w(float(s))),
    "alpha": ("loopback_alpha", float),
    "tau_s": ("loopback_tau", float),
    "seed": ("seed", int),
    "taps_sd": ("taps_sd", int),
    "taps_sr": ("taps_sr", int),
    "taps_rd": ("taps_rd", int),
    "tap_var_db_sd": ("tap_var_db_sd", float),
    "tap_var_db_sr": ("tap_var_db_sr", float),
    "tap_var_db_rd": ("tap_var_db_rd", float),
    "tap_spacing_s": ("tap_spacing", float),
}


def config_from_mapping(values: dict, base: SystemConfig = PAPER_PROFILE) -> tuple[SystemConfig, dict]:
    """Build a SystemConfig from file-style keys.

    Returns the config and a dict of the keys that are not SystemConfig fields
    (solver options, simulation extensions), left as strings.
    """
    changes, extra = {}, {}
    for key, raw in values.items():
        key = key.strip().lower()
        if key in _KEYS:
            name, conv = _KEYS[key]
            changes[name] = conv(str(raw).strip())
        else:
            extra[key] = str(raw).strip()
    return replace(base, **changes), extra


def load_config(path: str | Path, base: SystemConfig = PAPER_PROFILE) -> tuple[SystemConfig, dict]:
    """Read a ``key = value`` text file (``#`` comments allowed, no sections needed)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(path).read_text()
    parser.read_string("[config]\n" + text)
    merged = {}
    for section in parser.sections():
        merged.update(parser[section])
    return config_from_mapping(merged, base)


def config_to_mapping(config: SystemConfig) -> dict:
    """Inverse of :func:`config_from_mapping` for the SystemConfig fields."""
    d = asdict(config)
    out = {}
    for key, (name, _) in _KEYS.items():
        val = d[name]
        if val is None:
            continue
        if key in ("noise_psd_dbm_hz", "source_power_dbm", "relay_power_dbm"):
            val = w_to_dbm(val) if val > 0 else -math.inf
        out[key] = val
    return out

