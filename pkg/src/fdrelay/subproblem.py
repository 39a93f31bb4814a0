"""Per-frequency maximization of the partial Lagrangian.

For fixed dual prices ``mu`` (source power) and ``lam`` (relay power) the
dual function splits into independent bins. Every function here is
vectorized: coefficient fields may be scalars or equal-length arrays.

Two per-bin problems live here:

* the reduced problem whose penalty is ``mu P + lam xi^2 g P``. Its optimum
  has the two-case structure of :func:`solve_bin` (maximize ``beta``, then
  water-fill with ``chi``);
* the complete bin Lagrangian, which also charges ``lam xi^2 N0`` for the
  relay noise the filter forwards (:func:`solve_bin_lagrangian`). This is
  the one whose sum is the dual function of the power-constrained problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet

__all__ = [
    "DegenerateDualError",
    "BinCoefficients",
    "BinSolution",
    "EPS_DUAL",
    "beta",
    "chi",
    "v_value",
    "bin_objective",
    "maximize_beta",
    "solve_bin",
    "solve_bin_lagrangian",
    "scan_maximize",
    "solve_relay_given_p",
]

LN2 = math.log(2.0)
EPS_DUAL = 1e-15
XI_CAP = 1e12
_XI_FLOOR = 1e-30
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateDualError(ValueError):
    """The prices leave the bin problem unbounded (zero denominator in beta/chi)."""


@dataclass(frozen=True)
class BinCoefficients:
    """Magnitudes entering one bin: a=|H_SD|, b=|H_RD H_SR|, c=|H_RD|^2, g=|H_SR|^2."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    g: np.ndarray
    n0: float
    w: float

    def __post_init__(self):
        for name in ("a", "b", "c", "g"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, arr)
        if not (self.n0 > 0 and self.w > 0):
            raise ValueError("n0 and w must be positive")

    @classmethod
    def from_channels(cls, channels: ChannelSet, n0: float, w: float) -> "BinCoefficients":
        return cls(a=np.abs(channels.h_sd), b=np.abs(channels.h_rd * channels.h_sr),
                   c=np.abs(channels.h_rd) ** 2, g=np.abs(channels.h_sr) ** 2, n0=n0, w=w)

    @property
    def kappa(self) -> float:
        """Threshold (2 ln 2) W that beta has to exceed for a bin to carry power."""
        return 2.0 * LN2 * self.w

    @classmethod
    def _raw(cls, a, b, c, g, n0, w) -> "BinCoefficients":
        """Unchecked constructor for internal reshaping of validated arrays."""
        obj = object.__new__(cls)
        for name, val in zip(("a", "b", "c", "g", "n0", "w"), (a, b, c, g, n0, w)):
            object.__setattr__(obj, name, val)
        return obj

    def take(self, idx) -> "BinCoefficients":
        return BinCoefficients(self.a[idx], self.b[idx], self.c[idx], self.g[idx], self.n0, self.w)


@dataclass
class BinSolution:
    p_star: np.ndarray
    xi_star: np.ndarray
    value: np.ndarray


def _price(xi, k: BinCoefficients, mu, lam):
    d = mu + lam * np.asarray(xi, dtype=float) ** 2 * k.g
    if np.any(d <= 0):
        raise DegenerateDualError("mu + lam*xi^2*|H_SR|^2 vanishes")
    return d


def _gain(xi, k: BinCoefficients):
    """Effective SNR per unit source PSD, (a + b xi)^2 / ((c xi^2 + 1) N0)."""
    xi = np.asarray(xi, dtype=float)
    return (k.a + k.b * xi) ** 2 / ((k.c * xi**2 + 1.0) * k.n0)


def beta(xi_bar, coeffs: BinCoefficients, mu, lam):
    return _gain(xi_bar, coeffs) / _price(xi_bar, coeffs, mu, lam)


def chi(xi_bar, coeffs: BinCoefficients, mu, lam):
    """Water-filling source PSD for fixed ``xi_bar``."""
    d = _price(xi_bar, coeffs, mu, lam)
    gain = _gain(xi_bar, coeffs)
    with np.errstate(divide="ignore"):
        floor = np.where(gain > 0, 1.0 / np.where(gain > 0, gain, 1.0), np.inf)
    return np.maximum(0.0, 1.0 / (coeffs.kappa * d) - floor)


def v_value(xi_bar, coeffs: BinCoefficients, mu, lam):
    """Reduced bin objective after substituting the optimal source PSD."""
    bt = beta(xi_bar, coeffs, mu, lam)
    kap = coeffs.kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log2(bt / kap) / (2.0 * coeffs.w) - 1.0 / kap + 1.0 / bt
    return np.where(bt > kap, val, 0.0)


def bin_objective(p, xi_bar, coeffs: BinCoefficients, mu, lam, noise_cost: bool = False):
    """Direct evaluation of the bin Lagrangian at (p, xi_bar).

    ``noise_cost=False`` is the reduced objective
    ``log2(1 + gain P)/(2W) - mu P - lam xi^2 g P``; ``True`` adds ``- lam xi^2 N0``.
    """
    p = np.asarray(p, dtype=float)
    xi = np.asarray(xi_bar, dtype=float)
    val = np.log2(1.0 + _gain(xi, coeffs) * p) / (2.0 * coeffs.w) - mu * p - lam * xi**2 * coeffs.g * p
    if noise_cost:
        val = val - lam * xi**2 * coeffs.n0
    return val


def _dlog_beta(x, k: BinCoefficients, mu, lam):
    return (2.0 * k.b / (k.a + k.b * x)
            - 2.0 * lam * k.g * x / (mu + lam * k.g * x**2)
            - 2.0 * k.c * x / (k.c * x**2 + 1.0))


def maximize_beta(coeffs: BinCoefficients, mu, lam, xi_cap: float = XI_CAP, rtol: float = 1e-11):
    """Global maximizer of ``beta`` over [0, xi_cap].

    beta is quasi-concave, so d(log beta)/dxi changes sign at most once
    (+ to -); the root is located by bisection on that sign in log(xi).
    Returns 0 when beta is nonincreasing (b = 0) and ``xi_cap`` when beta
    is still increasing there.
    """
    k = coeffs
    mu = np.broadcast_to(np.asarray(mu, dtype=float), np.shape(k.a)).astype(float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), np.shape(k.a)).astype(float)
    if np.any((mu <= 0) & ((lam <= 0) | (k.g <= 0))):
        raise DegenerateDualError("beta is unbounded: mu = 0 and no relay price")
    if np.any(mu < 0) or np.any(lam < 0):
        raise DegenerateDualError("dual prices must be nonnegative")

    shape = np.broadcast(k.a, k.b, k.c, k.g, mu, lam).shape
    out = np.zeros(shape)
    kk = BinCoefficients(*(np.broadcast_to(x, shape) for x in (k.a, k.b, k.c, k.g)), n0=k.n0, w=k.w)
    mu = np.broadcast_to(mu, shape)
    lam = np.broadcast_to(lam, shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        rising_lo = (kk.b > 0) & (_dlog_beta(_XI_FLOOR, kk, mu, lam) > 0)
        rising_hi = rising_lo & (_dlog_beta(xi_cap, kk, mu, lam) > 0)
    out = np.where(rising_hi, xi_cap, out)
    todo = rising_lo & ~rising_hi
    if np.any(todo):
        sub = BinCoefficients._raw(kk.a[todo], kk.b[todo], kk.c[todo], kk.g[todo], kk.n0, kk.w)
        m, l = mu[todo], lam[todo]
        lo = np.full(m.shape, math.log(_XI_FLOOR))
        hi = np.full(m.shape, math.log(xi_cap))
        n_iter = int(math.ceil(math.log2((hi[0] - lo[0]) / rtol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            up = _dlog_beta(np.exp(mid), sub, m, l) > 0
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        out[todo] = np.exp(0.5 * (lo + hi))
    return out if out.ndim else float(out)


def solve_bin(coeffs: BinCoefficients, mu, lam) -> BinSolution:
    """Optimum of the reduced bin problem via the two-case rule.

    If max beta exceeds (2 ln 2) W the relay amplitude is the maximizer of
    beta, otherwise it is 0; the source PSD is then ``chi`` of that amplitude.
    """
    mu = np.where(np.asarray(mu, dtype=float) == 0, EPS_DUAL, mu)
    xs = maximize_beta(coeffs, mu, lam)
    on = beta(xs, coeffs, mu, lam) > coeffs.kappa
    xi = np.where(on, xs, 0.0)
    p = chi(xi, coeffs, mu, lam)
    val = v_value(xi, coeffs, mu, lam)
    return BinSolution(p_star=p, xi_star=xi, value=val)


def _golden(f, lo, hi, iters: int):
    """Vectorized golden-section maximization of f on per-element brackets."""
    a, b = lo.copy(), hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc >= fd
        a = np.where(left, a, c)
        b = np.where(left, d, b)
        c_new = np.where(left, b - _INVPHI * (b - a), d)
        d_new = np.where(left, c, a + _INVPHI * (b - a))
        f_new = f(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    better_c = fc >= fd
    return np.where(better_c, c, d), np.where(better_c, fc, fd)


def scan_maximize(f, hi, points: int = 96, decades: float = 8.0, iters: int = 48, lo=None):
    """Maximize a per-bin function on [0, hi] without assuming unimodality.

    ``f(x)`` receives arrays shaped like ``hi`` (or ``(n, m)`` with one
    column per trial point) and returns the per-bin values. A scan of
    ``points`` values, log-spaced in the distance from ``lo`` (default 0) down
    to ``(hi - lo) * 10**-decades``, picks the best bracket, golden-section
    refines inside it, and ``x = 0`` is kept as a candidate (ties favor the
    smaller argument). Points in (0, lo) are not examined.
    """
    hi = np.asarray(hi, dtype=float)
    lo = np.zeros_like(hi) if lo is None else np.minimum(np.asarray(lo, dtype=float), hi)
    width = hi - lo
    safe_w = np.where(width > 0, width, np.where(hi > 0, hi, 1.0))
    scale = 10.0 ** np.linspace(-decades, 0.0, points)
    xs = lo[:, None] + safe_w[:, None] * scale[None, :]
    vals = f(xs)
    i = np.argmax(vals, axis=1)
    rows = np.arange(hi.size)
    lo_b = xs[rows, np.maximum(i - 1, 0)]
    lo_b = np.where(i == 0, lo, lo_b)
    hi_b = xs[rows, np.minimum(i + 1, points - 1)]

    def f1(x):
        return f(x[:, None])[:, 0]

    x_ref, v_ref = _golden(f1, lo_b, hi_b, iters)
    v_grid = vals[rows, i]
    x_best = np.where(v_ref >= v_grid, x_ref, xs[rows, i])
    v_best = np.maximum(v_ref, v_grid)
    v0 = f1(np.zeros_like(hi))
    use0 = (v0 >= v_best) | (hi <= 0)
    return np.where(use0, 0.0, x_best), np.where(use0, v0, v_best)


def solve_bin_lagrangian(coeffs: BinCoefficients, mu, lam) -> BinSolution:
    """Optimum of the complete bin Lagrangian, relay-noise price included.

    For fixed xi the optimal source PSD is still ``chi(xi)``, so the bin value
    is ``v(xi) - lam N0 xi^2``. Past the maximizer of beta both terms
    decrease, and once ``lam N0 xi^2`` exceeds the largest attainable ``v`` the
    value is negative, so the search interval is [0, min of the two].
    """
    k = coeffs
    n = np.size(k.a)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).copy()
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,)).copy()
    mu[mu == 0] = EPS_DUAL
    kk = BinCoefficients(*(np.broadcast_to(x, (n,)) for x in (k.a, k.b, k.c, k.g)), n0=k.n0, w=k.w)

    xb = np.atleast_1d(maximize_beta(kk, mu, lam))
    bmax = beta(xb, kk, mu, lam)
    v_sup = np.maximum(np.log2(np.maximum(bmax, 1e-300) / kk.kappa) / (2.0 * kk.w), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cost = np.where(lam > 0, np.sqrt(v_sup / (lam * kk.n0)), np.inf)
    hi = np.minimum(xb, x_cost)
    hi = np.where(v_sup > 0, hi, 0.0)
    # v > 0 exactly where beta > kappa; beta rises on [0, xb], so that set
    # starts at a single threshold x_on and only [x_on, hi] can beat x = 0
    x_on = _activation(kk, mu, lam, xb)

    def phi(x):
        mm = mu[:, None] if x.ndim == 2 else mu
        ll = lam[:, None] if x.ndim == 2 else lam
        sub = kk if x.ndim == 1 else BinCoefficients._raw(kk.a[:, None], kk.b[:, None], kk.c[:, None],
                                                           kk.g[:, None], kk.n0, kk.w)
        return v_value(x, sub, mm, ll) - ll * kk.n0 * x**2

    xi, val = scan_maximize(phi, hi, lo=np.minimum(x_on, hi))
    p = chi(xi, kk, mu, lam)
    return BinSolution(p_star=p, xi_star=xi, value=val)


def _activation(k: BinCoefficients, mu, lam, xb, iters: int = 200):
    """Smallest xi in [0, xb] with beta(xi) >= kappa (xb where there is none)."""
    kappa = k.kappa
    lo = np.zeros_like(xb)
    hi = np.array(xb, dtype=float)
    on0 = beta(lo, k, mu, lam) >= kappa
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = beta(mid, k, mu, lam) >= kappa
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 1e-12 * np.maximum(hi, 1e-300)):
            break
    return np.where(on0, 0.0, lo)


def solve_relay_given_p(coeffs: BinCoefficients, p, lam) -> tuple[np.ndarray, np.ndarray]:
    """Best relay amplitude per bin for a fixed source PSD ``p`` and relay price ``lam``.

    Maximizes ``log2(1 + gain(xi) p)/(2W) - lam xi^2 (g p + N0)``; returns
    ``(xi, value)``. ``gain`` peaks at ``xi = b/(a c)`` and the rate term is
    bounded, which fixes the search interval.
    """
    k = coeffs
    n = np.size(k.a)
    p = np.broadcast_to(np.asarray(p, dtype=float), (n,))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (n,))
    kk = BinCoefficients(*(np.broadcast_to(x, (n,)) for x in (k.a, k.b, k.c, k.g)), n0=k.n0, w=k.w)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_gain = np.where(kk.b > 0, np.where(kk.a * kk.c > 0, kk.b / (kk.a * kk.c), XI_CAP), 0.0)
        x_gain = np.minimum(x_gain, XI_CAP)
        r_sup = np.log2(1.0 + p * (kk.a**2 + np.where(kk.c > 0, kk.b**2 / kk.c, 0.0)) / kk.n0) / (2.0 * kk.w)
        cost = lam * (kk.g * p + kk.n0)
        x_cost = np.where(cost > 0, np.sqrt(r_sup / cost), np.inf)
    hi = np.where(p > 0, np.minimum(x_gain, x_cost), 0.0)

    def f(x):
        two_d = x.ndim == 2
        col = (lambda v: v[:, None]) if two_d else (lambda v: v)
        sub = BinCoefficients._raw(col(kk.a), col(kk.b), col(kk.c), col(kk.g), kk.n0, kk.w)
        return np.log2(1.0 + _gain(x, sub) * col(p)) / (2.0 * kk.w) - col(cost) * x**2

    return scan_maximize(f, hi)
