"""Carleman weights ``e^{tau z}`` for the three-dimensional Landau Hamiltonian.

Conjugating ``H0`` by the weight gives, on Landau level ``k``, the axial
operator ``-u'' + 2 tau u' - tau^2 u + omega^2 u`` with ``omega = sqrt(2k + n)``.
Its inverse is convolution with the multiplier ``m_tau`` computed here in
closed form (residues of ``1/((eta + i tau)^2 + omega^2)``), checked against
direct Fourier quadrature, and assembled into ``G_tau`` and the weighted
``L^{2d/(d-2)}`` / ``L^{2d/(d+2)}`` ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .landau_core import QuadratureGrid, radial_function
from .resolvent3d import AxialGrid, LayeredFunction, axial_convolve, planar_profile


class ResonanceError(ValueError):
    """``tau^2`` is within 1/2 of the set ``{2k + n}``."""


@dataclass(frozen=True)
class CarlemanParams:
    tau: float
    d: int = 3
    interval: tuple[float, float] = (-1.0, 1.0)
    check: bool = True

    def __post_init__(self):
        if self.d < 3 or self.d % 2 == 0:
            raise ValueError("d must be odd and at least 3")
        if not self.interval[0] < self.interval[1]:
            raise ValueError("empty interval")
        if self.check and not admissible(self.tau, self.n):
            raise ResonanceError(f"tau^2 = {self.tau**2:.4f} lies within 1/2 of 2N + {self.n}")

    @property
    def n(self) -> int:
        return (self.d - 1) // 2


def resonance_distance(tau: float, n: int = 1) -> float:
    """``dist(tau^2, {2k + n : k >= 0})``."""
    s = tau * tau
    k = max(0, round((s - n) / 2.0))
    return min(abs(s - (2 * j + n)) for j in (max(k - 1, 0), k, k + 1))


def admissible(tau: float, n: int = 1) -> bool:
    return resonance_distance(tau, n) >= 0.5


def admissible_taus(lo: float, hi: float, count: int, n: int = 1) -> np.ndarray:
    """``count`` admissible rates spread over ``[lo, hi]`` (a fine grid, filtered, then thinned)."""
    fine = np.linspace(lo, hi, 40 * count + 1)
    ok = fine[[admissible(t, n) for t in fine]]
    if ok.size == 0:
        raise ResonanceError("no admissible tau in the interval")
    idx = np.unique(np.round(np.linspace(0, ok.size - 1, count)).astype(int))
    return ok[idx]


def frequency(k, n: int = 1):
    return np.sqrt(2.0 * np.asarray(k, dtype=float) + n)


def carleman_multiplier(t, tau: float, omega: float) -> np.ndarray:
    """``(1/2pi) int exp(i t eta) / ((eta + i tau)^2 + omega^2) d eta`` in closed form.

    Poles at ``eta = i(omega - tau)`` and ``-i(omega + tau)``.  For ``|tau| < omega``
    the result is ``exp(tau t - omega |t|) / (2 omega)``; for ``tau > omega`` both
    poles are in the lower half plane and ``m`` vanishes for ``t > 0``; ``tau < -omega``
    is the mirror image.  ``tau = +-omega`` is the resonant case and is rejected.
    """
    t = np.asarray(t, dtype=float)
    if omega <= 0:
        raise ValueError("omega must be positive")
    if abs(abs(tau) - omega) == 0.0:
        raise ResonanceError("tau = +-omega: the symbol vanishes on the real axis")
    if abs(tau) < omega:
        return np.exp(tau * t - omega * np.abs(t)) / (2.0 * omega)
    if tau > omega:
        neg = t < 0
        out = np.zeros_like(t)
        tn = t[neg] if t.ndim else t
        # e^{tau t} sinh(omega t) / omega, written to stay finite for large |t|
        val = (np.exp((tau + omega) * tn) - np.exp((tau - omega) * tn)) / (2.0 * omega)
        if t.ndim:
            out[neg] = val
            return out
        return val if neg else np.zeros_like(t)
    return carleman_multiplier(-t, -tau, omega)


def multiplier_bound(t, tau: float, omega: float) -> np.ndarray:
    """``exp(-|tau - omega| |t|) / omega`` (valid for ``tau >= 0``)."""
    return np.exp(-abs(tau - omega) * np.abs(np.asarray(t, dtype=float))) / omega


def multiplier_by_quadrature(t: float, tau: float, omega: float) -> float:
    """Direct quadrature of the Fourier integral (independent of the residue formula).

    With ``D(eta) = (eta + i tau)^2 + omega^2`` the integrand splits into an even
    real part ``(eta^2 - tau^2 + omega^2)/|D|^2`` against ``cos`` and an odd
    part ``2 tau eta/|D|^2`` against ``sin``; both are oscillatory Fourier integrals
    on ``[0, inf)`` evaluated with QUADPACK's QAWF.
    """
    c = omega * omega - tau * tau

    def den(eta):
        return (eta * eta + c) ** 2 + 4.0 * tau * tau * eta * eta

    even = lambda eta: (eta * eta + c) / den(eta)
    odd = lambda eta: 2.0 * tau * eta / den(eta)
    a = abs(float(t))
    if a == 0.0:
        ce, _ = integrate.quad(even, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=500)
        return ce / math.pi
    # QAWO on the peaked part, QAWF on the smooth monotone tail
    cut = 20.0 * (omega + abs(tau))
    ce = so = 0.0
    for lo, hi in ((0.0, cut), (cut, np.inf)):
        opts = {"limit": 500} if math.isfinite(hi) else {"limlst": 200}
        ce += integrate.quad(even, lo, hi, weight="cos", wvar=a, epsabs=1e-14, **opts)[0]
        so += integrate.quad(odd, lo, hi, weight="sin", wvar=a, epsabs=1e-14, **opts)[0]
    return (ce + math.copysign(1.0, t) * so) / math.pi


# ── level sums ────────────────────────────────────────────────────────


@dataclass
class MultiplierSum:
    value: float
    tail_bound: float
    k_max: int
    ratio: float


def _sum_tail(t: float, tau: float, k_max: int, n: int, d: int) -> float:
    """Bound for ``sum_{k > k_max} (2k+n)^{-1/d} |m|`` from the pointwise bound.

    With ``u = omega`` (``dk = u du``) the summand is at most
    ``u^{-2/d} exp(-(u - tau)|t|)``, decreasing once ``u > tau``.
    """
    u0 = math.sqrt(2.0 * k_max + n)
    if u0 <= tau or t == 0:
        return math.inf
    return u0 ** (-2.0 / d) * math.exp(-(u0 - tau) * abs(t)) / abs(t)


def multiplier_sum_k_max(t: float, tau: float, n: int = 1, d: int = 3, tol: float = 1e-10) -> int:
    u = tau + max(math.log(1.0 / (abs(t) * tol)), 1.0) / abs(t)
    return max(int(math.ceil((u * u - n) / 2.0)), int(math.ceil(tau * tau)) + 1)


def multiplier_sum_check(t: float, tau: float, d: int = 3, K_max: int | None = None,
                         tol: float = 1e-10, chunk: int = 1 << 20) -> MultiplierSum:
    """``sum_k (2k+n)^{-1/d} |m_tau(t, omega_k)|`` divided by ``1 + |t|^{2/d - 1}``."""
    if tau < 0:
        raise ValueError("the sum check uses tau >= 0")
    n = (d - 1) // 2
    if t == 0:
        raise ValueError("the level sum diverges at t = 0")
    K = multiplier_sum_k_max(t, tau, n, d, tol) if K_max is None else K_max
    tail = _sum_tail(t, tau, K, n, d)
    if not tail <= tol:
        raise ValueError(f"multiplier tail {tail:.2e} above {tol:.0e} at K_max = {K}")
    total = 0.0
    for lo in range(0, K + 1, chunk):
        k = np.arange(lo, min(K + 1, lo + chunk))
        om = frequency(k, n)
        m = np.abs(_multiplier_vec(t, tau, om))
        total += float(np.sum((2.0 * k + n) ** (-1.0 / d) * m))
    ratio = total / (1.0 + abs(t) ** (2.0 / d - 1.0))
    return MultiplierSum(total, tail, K, ratio)


def _multiplier_vec(t: float, tau: float, om: np.ndarray) -> np.ndarray:
    """``m_tau(t, omega)`` for a vector of frequencies (no resonant entries)."""
    if tau < 0:
        return _multiplier_vec(-t, -tau, om)
    out = np.zeros_like(om)
    lo = om > tau
    out[lo] = np.exp(tau * t - om[lo] * abs(t)) / (2.0 * om[lo])
    if t < 0:
        hi = ~lo
        out[hi] = (np.exp((tau + om[hi]) * t) - np.exp((tau - om[hi]) * t)) / (2.0 * om[hi])
    return out


@dataclass
class SweepResult:
    max_ratio: float
    argmax: tuple
    rows: list


def multiplier_sweep(taus: Sequence[float], ts: Sequence[float], d: int = 3, k_scale: int = 1) -> SweepResult:
    n = (d - 1) // 2
    rows = []
    for tau in taus:
        for t in ts:
            K = k_scale * multiplier_sum_k_max(t, tau, n, d)
            r = multiplier_sum_check(t, tau, d, K)
            rows.append((float(tau), float(t), r.ratio, r.k_max))
    best = max(rows, key=lambda r: r[2])
    return SweepResult(best[2], best[:2], rows)


# ── G_tau and the Carleman ratio ──────────────────────────────────────


def conjugated_inverse_apply(params: CarlemanParams, f: LayeredFunction) -> LayeredFunction:
    """``G_tau f``: per level ``k`` convolve the axial coefficients with ``m_tau(., omega_k)``."""
    if params.check and not admissible(params.tau, params.n):
        raise ResonanceError("resonant tau")
    out = np.empty_like(f.coeffs)
    for k in range(f.k_max + 1):
        om = float(frequency(k, params.n))
        out[k] = axial_convolve(f.coeffs[k], lambda t, om=om: carleman_multiplier(t, params.tau, om), f.axial)
    return f.copy(out)


def apply_conjugated(u: LayeredFunction, tau: float, n: int = 1) -> np.ndarray:
    """``(-d^2 + 2 tau d - tau^2 + H0_perp) u`` at interior axial points (centred differences)."""
    c = u.coeffs
    h = u.axial.h
    d2 = (c[..., 2:] - 2.0 * c[..., 1:-1] + c[..., :-2]) / h**2
    d1 = (c[..., 2:] - c[..., :-2]) / (2.0 * h)
    lam = (2.0 * np.arange(u.k_max + 1) + n)[:, None, None]
    return -d2 + 2.0 * tau * d1 + (lam - tau * tau) * c[..., 1:-1]


def conjugated_roundtrip_residual(params: CarlemanParams, f: LayeredFunction) -> float:
    pad = LayeredFunction(np.pad(f.coeffs, ((0, 0), (0, 0), (1, 1))), f.axial.padded(1), f.tail)
    u = conjugated_inverse_apply(params, pad)
    res = apply_conjugated(u, params.tau, params.n) - f.coeffs
    return float(np.sqrt(np.sum(np.abs(res) ** 2) / np.sum(np.abs(f.coeffs) ** 2)))


def apply_h0(u: LayeredFunction, n: int = 1) -> LayeredFunction:
    """``H0 u`` channelwise with second differences (zero values outside the axial grid)."""
    c = np.pad(u.coeffs, ((0, 0), (0, 0), (1, 1)))
    h = u.axial.h
    d2 = (c[..., 2:] - 2.0 * c[..., 1:-1] + c[..., :-2]) / h**2
    lam = (2.0 * np.arange(u.k_max + 1) + n)[:, None, None]
    return u.copy(lam * u.coeffs - d2)


@dataclass
class CarlemanRatio:
    tau: float
    lhs: float
    rhs: float
    ratio: float
    admissible: bool

    def as_csv(self) -> list:
        return [self.tau, self.lhs, self.rhs, self.ratio, int(self.admissible)]


CARLEMAN_COLUMNS = ("tau", "lhs", "rhs", "ratio", "admissible")


def carleman_ratio(u: LayeredFunction, tau: float, grid: QuadratureGrid, interval=None, d: int = 3,
                   check: bool = True) -> CarlemanRatio:
    """``||e^{tau z} u||_{L^{2d/(d-2)}} / ||e^{tau z} H0 u||_{L^{2d/(d+2)}}`` on ``grid x axial``.

    The factor ``e^{tau max z}`` is divided out of both weights before norming.
    """
    n = (d - 1) // 2
    ok = admissible(tau, n)
    if check and not ok:
        raise ResonanceError(f"tau = {tau} is resonant")
    z = u.axial.z
    if interval is not None:
        inside = (z >= interval[0] - 1e-12) & (z <= interval[1] + 1e-12)
        if np.abs(u.coeffs[..., ~inside]).max(initial=0.0) > 0:
            raise ValueError("u is not supported in the interval")
    weight = np.exp(tau * (z - z.max()))
    p_hi = 2.0 * d / (d - 2)
    p_lo = 2.0 * d / (d + 2)
    ch = u.channels(grid)
    uv = u.to_grid(grid, ch) * weight
    hv = apply_h0(u, n).to_grid(grid, ch) * weight
    lhs = u.axial.lp_norm(planar_profile(uv, grid, p_hi), p_hi)
    rhs = u.axial.lp_norm(planar_profile(hv, grid, p_lo), p_lo)
    if rhs < 1e-12 * max(lhs, 1e-300) or rhs < 1e-300:
        raise ValueError("H0 u vanishes numerically; the ratio is undefined")
    return CarlemanRatio(float(tau), lhs, rhs, lhs / rhs, ok)


def bump(z: np.ndarray, a: float, b: float) -> np.ndarray:
    """Smooth bump supported in ``(a, b)``."""
    c, w = 0.5 * (a + b), 0.5 * (b - a)
    s = (z - c) / w
    out = np.zeros_like(z, dtype=float)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def tau_sweep(u: LayeredFunction, taus: Sequence[float], grid: QuadratureGrid, d: int = 3) -> list[CarlemanRatio]:
    return [carleman_ratio(u, float(t), grid, d=d) for t in taus]


def resonance_probe(k: int, taus: Sequence[float], grid: QuadratureGrid, axial: AxialGrid,
                    interval: tuple[float, float], n: int = 1) -> list[CarlemanRatio]:
    """Ratio for ``u_tau = e^{-tau z} phi_{k,0} v(z)`` with a wide bump ``v``.

    On level ``k`` the conjugated symbol at zero axial frequency is
    ``omega_k^2 - tau^2``; as ``tau^2 -> 2k + n`` it vanishes and ``e^{tau z} H0 u``
    shrinks to the ``v'`` terms, so the ratio grows.  Resonant rates are allowed here.
    """
    out = []
    v = bump(axial.z, *interval)
    for tau in taus:
        prof = np.exp(-tau * (axial.z - axial.z.max())) * v
        u = LayeredFunction.separable([(k, 0, 1.0, prof)], axial)
        out.append(carleman_ratio(u, float(tau), grid, check=False))
    return out


def projection_instance_check(ks: Sequence[int], grid: QuadratureGrid, d: int = 3, n_random: int = 4,
                              m_span: int = 6, seed: int = 0, exponent: float | None = None) -> dict:
    """``||P_k u||_{L^{2d/(d-2)}} / (lambda_k^{exponent} ||u||_2)`` over levels ``ks``.

    Test functions are the zonal state ``phi_{k,k}`` (a multiple of ``P_k(., 0)``)
    and random combinations of ``phi_{k,m}``, ``m < m_span``; both lie in the range
    of ``P_k`` so ``P_k u = u``.  Returns per-level worst constants.
    """
    p = 2.0 * d / (d - 2)
    expo = -1.0 / (2 * d) if exponent is None else exponent
    rng = np.random.default_rng(seed)
    out = {}
    for k in ks:
        lam = 2 * k + 1
        zonal = radial_function(k, k, grid.radii)[:, None] * np.ones(grid.n_theta)[None, :]
        vals = [grid.lp_norm(zonal, p) / math.sqrt(abs(grid.inner(zonal, zonal)))]
        for _ in range(n_random):
            c = rng.normal(size=m_span) + 1j * rng.normal(size=m_span)
            u = sum(c[m] * grid.sample_eigenfunction(k, m) for m in range(m_span))
            vals.append(grid.lp_norm(u, p) / math.sqrt(abs(grid.inner(u, u))))
        out[k] = {"zonal": vals[0] / lam**expo, "random": max(vals[1:]) / lam**expo}
    return out
