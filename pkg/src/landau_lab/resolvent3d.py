"""Layered free resolvent in three dimensions (one Landau plane times an axis).

``H0 = H0_perp - d^2/dz^2`` splits over Landau levels: on level ``k`` the
resolvent is the one-dimensional Green function at energy ``z - lambda_k``.
This module holds that channel representation, the level sum bounding the
kernel, the mixed axial/planar norms, and the bilinear limiting-absorption
scans for ``H0`` and small perturbations ``H0 + V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .landau_core import (
    INFINITY,
    TWO_PI,
    LevelChannels,
    QuadratureGrid,
    arpack_start,
    rho_exponent,
)

D3 = 3
N3 = 1  # half the planar dimension for d = 3


class TailCertificateError(RuntimeError):
    """A truncation tail could not be certified below its tolerance."""


class SmallnessGateError(RuntimeError):
    """The Birman-Schwinger operator is not a strict contraction."""


# ── one-dimensional Green function ────────────────────────────────────


def upper_sqrt(mu) -> np.ndarray:
    """Square root with branch cut ``[0, inf)`` and values in the upper half plane."""
    return 1j * np.sqrt(-np.asarray(mu, dtype=complex))


def halfline_resolvent_kernel(mu: complex, t) -> np.ndarray:
    """Kernel of ``(-d^2/dt^2 - mu)^{-1}``: ``i exp(i sqrt(mu)|t|) / (2 sqrt(mu))``.

    ``sqrt`` maps ``C \\ [0, inf)`` to the upper half plane, so the kernel decays
    (outgoing for ``Im mu > 0``).  Note ``i/(2s) = -1/(2is)``: the expression
    ``exp(i s|t|)/(2is)`` has the same modulus but the opposite sign.
    """
    mu = complex(mu)
    if mu.imag == 0.0 and mu.real >= 0.0:
        raise ValueError(f"mu = {mu} lies on the branch cut [0, inf)")
    s = upper_sqrt(mu)
    return 1j * np.exp(1j * s * np.abs(np.asarray(t, dtype=float))) / (2.0 * s)


# ── axial grids and layered functions ─────────────────────────────────


@dataclass(frozen=True)
class AxialGrid:
    """Uniform samples ``z_j = start + j h``, ``j < n``, each with weight ``h``."""

    start: float
    h: float
    n: int

    def __post_init__(self):
        if self.h <= 0 or self.n < 1:
            raise ValueError("axial grid needs h > 0 and n >= 1")

    @classmethod
    def symmetric(cls, half_width: float, h: float) -> "AxialGrid":
        n = 2 * int(math.ceil(half_width / h)) + 1
        return cls(-(n // 2) * h, h, n)

    @classmethod
    def covering(cls, profile: Callable, h: float, mass_tol: float = 1e-8, start: float = 4.0) -> "AxialGrid":
        """Smallest symmetric grid (doubling) keeping mass ``>= 1 - mass_tol`` of ``|profile|^2``."""
        hw = start
        wide = cls.symmetric(64.0 * start, h)
        total = float(np.sum(np.abs(profile(wide.z)) ** 2) * h)
        if total == 0:
            raise ValueError("profile vanishes")
        while True:
            g = cls.symmetric(hw, h)
            mass = float(np.sum(np.abs(profile(g.z)) ** 2) * h)
            if mass >= (1.0 - mass_tol) * total or hw >= 64.0 * start:
                return g
            hw *= 1.5

    @property
    def z(self) -> np.ndarray:
        return self.start + self.h * np.arange(self.n)

    def padded(self, p: int) -> "AxialGrid":
        return AxialGrid(self.start - p * self.h, self.h, self.n + 2 * p)

    def refined(self) -> "AxialGrid":
        return AxialGrid(self.start, 0.5 * self.h, 2 * self.n - 1)

    def lp_norm(self, g, p) -> float:
        a = np.abs(g)
        if p == INFINITY:
            return float(a.max())
        return float((self.h * np.sum(a**p)) ** (1.0 / p))


@dataclass
class LayeredFunction:
    """Coefficients ``c[k, m, j]`` of ``sum phi_{k,m}(x_perp) c[k,m,j]`` at ``z_j``.

    Levels run over ``0..k_max`` and guiding-centre indices over ``0..m_max``;
    ``tail`` is the fraction of mass lost when the function was projected
    onto this finite channel set (zero for functions built from channels).
    """

    coeffs: np.ndarray
    axial: AxialGrid
    tail: float = 0.0

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 3 or self.coeffs.shape[2] != self.axial.n:
            raise ValueError("coefficients must have shape (levels, m, n_axial)")

    @property
    def k_max(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def m_max(self) -> int:
        return self.coeffs.shape[1] - 1

    @classmethod
    def zeros(cls, k_max: int, m_max: int, axial: AxialGrid) -> "LayeredFunction":
        return cls(np.zeros((k_max + 1, m_max + 1, axial.n), dtype=complex), axial)

    @classmethod
    def separable(cls, terms: Sequence[tuple[int, int, complex, np.ndarray]], axial: AxialGrid,
                  k_max: int | None = None, m_max: int | None = None) -> "LayeredFunction":
        """``sum amp * phi_{k,m}(x_perp) v(z)`` from ``(k, m, amp, v)`` terms."""
        kk = max(t[0] for t in terms) if k_max is None else k_max
        mm = max(t[1] for t in terms) if m_max is None else m_max
        f = cls.zeros(kk, mm, axial)
        for k, m, amp, v in terms:
            f.coeffs[k, m] += amp * np.asarray(v)
        return f

    def copy(self, coeffs=None) -> "LayeredFunction":
        return LayeredFunction(self.coeffs.copy() if coeffs is None else coeffs, self.axial, self.tail)

    def conj(self) -> "LayeredFunction":
        """Coefficient conjugate (equals pointwise conjugation for real-channel data
        paired with the real radial profiles)."""
        return self.copy(np.conj(self.coeffs))

    def norm(self) -> float:
        return float(np.sqrt(self.axial.h * np.sum(np.abs(self.coeffs) ** 2)))

    def pair(self, other: "LayeredFunction") -> complex:
        """``int u conj(g)`` via Parseval in the channel basis."""
        a, b = _common(self, other)
        return complex(self.axial.h * np.sum(a * np.conj(b)))

    def channels(self, grid: QuadratureGrid) -> LevelChannels:
        if grid.n_theta // 2 - 1 < self.k_max + self.m_max:
            raise ValueError("planar grid too coarse in angle for these channels")
        return LevelChannels(grid, list(range(self.k_max + 1)), m_max=self.m_max)

    def to_grid(self, grid: QuadratureGrid, channels: LevelChannels | None = None) -> np.ndarray:
        """Samples on ``grid`` times the axial grid, shape ``(n_r, n_theta, n_z)``."""
        ch = channels or self.channels(grid)
        coeffs = {}
        for k in range(self.k_max + 1):
            ls, _, _ = ch.table(k)
            ms = ls + k
            coeffs[k] = self.coeffs[k, ms]
        return ch.to_grid(ch.synthesize_hat(coeffs))

    @classmethod
    def from_grid(cls, values: np.ndarray, grid: QuadratureGrid, axial: AxialGrid, k_max: int, m_max: int,
                  tail_tol: float | None = 1e-6, channels: LevelChannels | None = None) -> "LayeredFunction":
        """Project samples onto levels ``<= k_max`` and ``m <= m_max``; the lost
        mass fraction is certified against ``tail_tol``."""
        ch = channels or LevelChannels(grid, list(range(k_max + 1)), m_max=m_max)
        fhat = ch.fourier(values)
        out = np.zeros((k_max + 1, m_max + 1, axial.n), dtype=complex)
        for k in range(k_max + 1):
            ls, _, _ = ch.table(k)
            out[k, ls + k] = ch.analyze(fhat, k)
        total = float(axial.h * np.sum(grid.weights[:, :, None] * np.abs(values) ** 2))
        kept = float(axial.h * np.sum(np.abs(out) ** 2))
        tail = max(0.0, 1.0 - kept / total) if total > 0 else 0.0
        if tail_tol is not None and tail > tail_tol:
            raise TailCertificateError(f"channel truncation loses {tail:.2e} of the mass (> {tail_tol:.0e})")
        return cls(out, axial, tail)


def _common(f: LayeredFunction, g: LayeredFunction):
    if f.axial != g.axial:
        raise ValueError("layered functions live on different axial grids")
    K = max(f.k_max, g.k_max) + 1
    M = max(f.m_max, g.m_max) + 1
    a = np.zeros((K, M, f.axial.n), dtype=complex)
    b = np.zeros_like(a)
    a[: f.k_max + 1, : f.m_max + 1] = f.coeffs
    b[: g.k_max + 1, : g.m_max + 1] = g.coeffs
    return a, b


def level_energy(k, n: int = N3):
    return 2 * np.asarray(k) + n


def axial_convolve(data: np.ndarray, kernel: Callable, axial: AxialGrid) -> np.ndarray:
    """``u_j = sum_i h K(z_j - z_i) data_i`` along the last axis."""
    n = axial.n
    offs = axial.h * np.arange(-(n - 1), n)
    kern = axial.h * kernel(offs)
    shape = (1,) * (data.ndim - 1) + (kern.size,)
    full = fftconvolve(data, kern.reshape(shape), axes=-1)
    return full[..., n - 1 : 2 * n - 1]


def axial_convolve_direct(v: np.ndarray, kernel: Callable, axial: AxialGrid) -> np.ndarray:
    """Reference direct-summation convolution of a single profile."""
    z = axial.z
    return axial.h * (kernel(z[:, None] - z[None, :]) @ v)


def _check_z(z: complex):
    if z.imag == 0.0:
        raise ValueError("z must be non-real")
    if abs(z.imag) > 1.0:
        raise ValueError("need 0 < |Im z| <= 1")


def layered_resolvent_apply(z: complex, f: LayeredFunction, tail_tol: float = 1e-6) -> LayeredFunction:
    """``R0(z) f``: per level, convolution with the Green function at ``z - lambda_k``."""
    z = complex(z)
    _check_z(z)
    if f.tail > tail_tol:
        raise TailCertificateError(f"input tail {f.tail:.2e} above {tail_tol:.0e}")
    out = np.empty_like(f.coeffs)
    for k in range(f.k_max + 1):
        mu = z - level_energy(k)
        out[k] = axial_convolve(f.coeffs[k], lambda t, mu=mu: halfline_resolvent_kernel(mu, t), f.axial)
    return f.copy(out)


def apply_h0_minus_z(u: LayeredFunction, z: complex) -> np.ndarray:
    """``(H0 - z) u`` at interior axial points (second differences), shape ``(K, M, n - 2)``."""
    c = u.coeffs
    h = u.axial.h
    d2 = (c[..., 2:] - 2.0 * c[..., 1:-1] + c[..., :-2]) / h**2
    lam = level_energy(np.arange(u.k_max + 1))[:, None, None]
    return (lam - z) * c[..., 1:-1] - d2


def resolvent_roundtrip_residual(z: complex, f: LayeredFunction) -> float:
    """``||(H0 - z) R0(z) f - f|| / ||f||`` on the axial grid of ``f``.

    ``f`` is padded by one zero sample on each side so the second difference
    is available at every original point.
    """
    pad = LayeredFunction(np.pad(f.coeffs, ((0, 0), (0, 0), (1, 1))), f.axial.padded(1), f.tail)
    u = layered_resolvent_apply(z, pad)
    res = apply_h0_minus_z(u, z) - f.coeffs
    return float(np.sqrt(np.sum(np.abs(res) ** 2)) / np.sqrt(np.sum(np.abs(f.coeffs) ** 2)))


# ── the level sum ─────────────────────────────────────────────────────


@dataclass
class KernelSum:
    value: float
    tail_bound: float
    k_max: int


def nearest_level(z: complex, n: int = N3) -> int:
    return int(max(0, round((complex(z).real - n) / 2.0)))


def delta_of(z: complex, n: int = N3) -> float:
    """Distance from ``z`` to ``{2k + n}``."""
    z = complex(z)
    k = nearest_level(z, n)
    return min(abs(z - (2 * j + n)) for j in (max(k - 1, 0), k, k + 1))


def _tail_bound(t: float, z: complex, k_max: int, n: int) -> float:
    s = 2.0 * k_max + n - complex(z).real  # lambda_{k_max} - Re z; the tail starts above it
    if s <= 0:
        return math.inf
    return math.sqrt(2.0) * math.exp(-abs(t) * math.sqrt(s / 2.0)) / abs(t)


def kernel_sum_k_max(t: float, z: complex, tol: float = 1e-8, n: int = N3) -> int:
    """Smallest ``K`` (at least ``2 k0 + 1``) whose tail bound is below ``tol``."""
    k0 = nearest_level(z, n)
    t = abs(t)
    u = math.log(math.sqrt(2.0) / (t * tol)) / t
    s = 2.0 * max(u, 0.0) ** 2
    K = int(math.ceil((s + complex(z).real - n) / 2.0))
    return max(K, 2 * k0 + 1)


def _level_sum(ts: np.ndarray, z: complex, rho: float, k_max: int, n: int, chunk: int = 1 << 18) -> np.ndarray:
    ts = np.abs(np.asarray(ts, dtype=float))
    out = np.zeros(ts.shape)
    for lo in range(0, k_max + 1, chunk):
        k = np.arange(lo, min(k_max + 1, lo + chunk))
        lam = level_energy(k, n).astype(float)
        w = z - lam
        amp = lam**rho / np.sqrt(np.abs(w))
        decay = upper_sqrt(w).imag
        out += np.exp(-np.multiply.outer(ts, decay)) @ amp
    return out


def kernel_sum_lhs(t: float, z: complex, q, K_max: int | None = None, d: int = D3,
                   tol: float = 1e-8) -> KernelSum:
    """``sum_k lambda_k^rho(q) exp(-Im sqrt(z - lambda_k)|t|) / |z - lambda_k|^{1/2}``.

    Terms with ``k > K_max`` are bounded by ``sqrt(2) exp(-|t| sqrt(s/2)) / |t|`` with
    ``s = lambda_{K_max} - Re z``, using ``Im sqrt(w) >= sqrt(|w|/2)`` once
    ``Re w < 0``.  A tail above ``tol`` raises.
    """
    z = complex(z)
    _check_z(z)
    if t == 0:
        raise ValueError("the level sum diverges at t = 0")
    n = (d - 1) // 2
    rho = float(rho_exponent(d, q))
    if K_max is None:
        K_max = kernel_sum_k_max(t, z, tol, n)
    tail = _tail_bound(t, z, K_max, n)
    if not tail <= tol:
        raise TailCertificateError(f"level tail {tail:.2e} above {tol:.0e} at K_max = {K_max}")
    return KernelSum(float(_level_sum(np.array([t]), z, rho, K_max, n)[0]), tail, K_max)


def kernel_sum_rhs(t: float, z: complex, q, d: int = D3) -> float:
    n = (d - 1) // 2
    rho = float(rho_exponent(d, q))
    k0 = max(nearest_level(z, n), 1)
    return abs(t) ** (-1.0 - 2.0 * rho) + k0**rho * (math.sqrt(k0) + delta_of(z, n) ** -0.5)


def cluster_point(k0: int, delta: float, phase: float = math.pi / 4, n: int = N3) -> complex:
    """``lambda_k0 + delta e^{i phase}``: a point of the cluster at distance ``delta``."""
    return (2 * k0 + n) + delta * complex(math.cos(phase), math.sin(phase))


@dataclass
class SumLattice:
    qs: Sequence[float] = (3.0, 4.0, 5.0)
    k0s: Sequence[int] = (5, 10, 20, 40)
    t_min: float = 0.01
    t_max: float = 10.0
    n_t: int = 9
    deltas: Sequence[float] = (0.1, 0.5, 1.0)
    phase: float = math.pi / 4

    @property
    def ts(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.n_t)

    def refined(self) -> "SumLattice":
        d = sorted(set(self.deltas) | {0.5 * (a + b) for a, b in zip(self.deltas, self.deltas[1:])})
        return SumLattice(self.qs, self.k0s, self.t_min, self.t_max, 2 * self.n_t - 1, tuple(d), self.phase)


@dataclass
class SumCheckResult:
    max_ratio: float
    argmax: dict
    rows: list = field(default_factory=list)


def kernel_sum_check(lattice: SumLattice, d: int = D3, tol: float = 1e-8, k_scale: int = 1) -> SumCheckResult:
    """Max of ``lhs / (|t|^{-1-2rho} + k0^rho (k0^{1/2} + delta^{-1/2}))`` over the lattice.

    ``k_scale`` multiplies every certified ``K_max`` (2 doubles the truncation).
    """
    n = (d - 1) // 2
    rows = []
    ts = lattice.ts
    for q in lattice.qs:
        rho = float(rho_exponent(d, q))
        for k0 in lattice.k0s:
            for delta in lattice.deltas:
                z = cluster_point(k0, delta, lattice.phase, n)
                Ks = [k_scale * kernel_sum_k_max(t, z, tol, n) for t in ts]
                k = np.arange(max(Ks) + 1)
                lam = level_energy(k, n).astype(float)
                w = z - lam
                amp = lam**rho / np.sqrt(np.abs(w))
                decay = upper_sqrt(w).imag
                for t, K in zip(ts, Ks):
                    v = float(np.dot(amp[: K + 1], np.exp(-t * decay[: K + 1])))
                    rhs = kernel_sum_rhs(t, z, q, d)
                    rows.append({"q": float(q), "k0": int(k0), "delta": float(delta), "t": float(t),
                                 "lhs": v, "rhs": float(rhs), "ratio": float(v / rhs), "k_max": int(K),
                                 "tail": float(_tail_bound(t, z, K, n))})
    best = max(rows, key=lambda r: r["ratio"])
    return SumCheckResult(best["ratio"], best, rows)


# ── mixed norms ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class MixedNormSpec:
    """Axial intersection norms over a planar Lebesgue norm.

    ``Xq``: planar ``L^{q'}``, axial ``L^{2/(1-2rho)} cap L^1``;
    ``Vq``: planar ``L^r`` with ``q = 2r'``, axial ``L^{-1/(2rho)} cap L^1``.
    The dual sum space is not normed here (it is probed bilinearly).
    """

    space: str
    q: float
    d: int = D3

    def __post_init__(self):
        if self.space not in ("Xq", "Vq", "Xq_star"):
            raise ValueError(f"unknown space {self.space!r}")
        hi = 2.0 * self.d / (self.d - 2)
        if not 2.0 < float(self.q) < hi:
            raise ValueError(f"q must lie in (2, {hi:g})")

    @property
    def rho(self) -> float:
        return float(rho_exponent(self.d, self.q))

    @property
    def planar_exponent(self) -> float:
        q = float(self.q)
        return q / (q - 1.0) if self.space == "Xq" else q / (q - 2.0)

    @property
    def axial_exponents(self) -> tuple[float, float]:
        rho = self.rho
        if self.space == "Xq":
            return 2.0 / (1.0 - 2.0 * rho), 1.0
        return -1.0 / (2.0 * rho), 1.0


def planar_profile(values: np.ndarray, grid: QuadratureGrid, p: float) -> np.ndarray:
    """``z -> ||f(., z)||_{L^p(plane)}`` for samples of shape ``(n_r, n_theta, n_z)``."""
    w = grid.weights[:, :, None]
    return np.sum(w * np.abs(values) ** p, axis=(0, 1)) ** (1.0 / p)


def mixed_norm(f, spec: MixedNormSpec, grid: QuadratureGrid | None = None, axial: AxialGrid | None = None) -> float:
    """Mixed norm of a layered function or of samples ``(n_r, n_theta, n_z)``.

    The planar norm is taken slice by slice, then the larger of the two axial
    norms of that profile is returned.
    """
    if spec.space == "Xq_star":
        raise ValueError("the dual sum space is only probed bilinearly")
    if isinstance(f, LayeredFunction):
        if grid is None:
            raise ValueError("a planar grid is needed to norm a layered function")
        values, axial = f.to_grid(grid), f.axial
    else:
        values = np.asarray(f)
        if grid is None or axial is None:
            raise ValueError("samples need their planar and axial grids")
    g = planar_profile(values, grid, spec.planar_exponent)
    return max(axial.lp_norm(g, p) for p in spec.axial_exponents)


# ── Hardy-Littlewood-Sobolev helpers ──────────────────────────────────


def hls_cell_matrix(n: int, h: float, alpha: float) -> np.ndarray:
    """Exact ``int_cell_i int_cell_j |x - y|^{-alpha}`` for cells of width ``h`` (``0 < alpha < 1``)."""
    F = lambda s: np.abs(s) ** (2.0 - alpha) / ((1.0 - alpha) * (2.0 - alpha))
    d = h * (np.arange(n)[:, None] - np.arange(n)[None, :])
    return F(d + h) - 2.0 * F(d) + F(d - h)


def hls_ratio(a: np.ndarray, b: np.ndarray, h: float, rho: float) -> float:
    """``int int |x-y|^{-1-2rho} a(y) b(x) / (||a||_p ||b||_p)`` with ``p = 2/(1-2rho)``
    for cellwise constant nonnegative profiles."""
    alpha = 1.0 + 2.0 * rho
    p = 2.0 / (1.0 - 2.0 * rho)
    A = hls_cell_matrix(a.size, h, alpha)
    num = float(b @ A @ a)
    na = (h * np.sum(np.abs(a) ** p)) ** (1.0 / p)
    nb = (h * np.sum(np.abs(b) ** p)) ** (1.0 / p)
    return num / (na * nb)


def l1_pairing_identity(a: np.ndarray, b: np.ndarray, h: float) -> tuple[float, float]:
    """Double integral of ``a(y) b(x)`` and the product of the ``L^1`` norms."""
    a = np.abs(a)
    b = np.abs(b)
    return float(h * h * np.sum(np.outer(b, a))), float((h * a.sum()) * (h * b.sum()))


# ── perturbations and the bilinear LAP scan ───────────────────────────


@dataclass(frozen=True)
class LayeredPotential:
    """Separable real potential ``V(x_perp, z) = Vp(x_perp) exp(-z^2 / (2 w^2))``."""

    planar: object  # cluster_lab.PotentialSpec
    axial_width: float = 1.0

    def values(self, grid: QuadratureGrid, axial: AxialGrid) -> np.ndarray:
        vz = np.exp(-0.5 * (axial.z / self.axial_width) ** 2)
        return self.planar.values(grid)[:, :, None] * vz[None, None, :]


@dataclass
class BSOperator:
    """Matrix-free ``|V|^{1/2} R0(z) V^{1/2}`` on levels ``<= k_max`` (grid samples)."""

    z: complex
    grid: QuadratureGrid
    axial: AxialGrid
    v: np.ndarray
    k_max: int
    m_max: int

    def __post_init__(self):
        self.channels = LevelChannels(self.grid, list(range(self.k_max + 1)), m_max=self.m_max)
        self.half = np.sqrt(np.abs(self.v))
        self.sgn = np.sign(self.v)
        self.sw = np.sqrt(self.grid.weights[:, :, None] * self.axial.h)

    def resolvent_grid(self, f: np.ndarray, z: complex | None = None) -> np.ndarray:
        z = self.z if z is None else z
        ch = self.channels
        fhat = ch.fourier(f)
        coeffs = {}
        for k in range(self.k_max + 1):
            c = ch.analyze(fhat, k)
            mu = z - level_energy(k)
            coeffs[k] = axial_convolve(c, lambda t, mu=mu: halfline_resolvent_kernel(mu, t), self.axial)
        return ch.to_grid(ch.synthesize_hat(coeffs))

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.half * self.resolvent_grid(self.half * self.sgn * psi)

    def tail_bound(self) -> float:
        gap = 2.0 * (self.k_max + 1) + N3 - self.z.real
        vmax = float(np.abs(self.v).max())
        return math.inf if gap <= 0 else vmax / gap

    def linear_operator(self) -> spla.LinearOperator:
        shape = self.v.shape
        sw = self.sw

        def mv(x):
            return (sw * self.apply(x.reshape(shape) / sw)).ravel()

        def rmv(x):
            f = x.reshape(shape) / sw
            g = self.half * self.resolvent_grid(self.half * f, np.conj(self.z))
            return (sw * self.sgn * g).ravel()

        n = self.v.size
        return spla.LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=complex)

    def norm(self) -> float:
        op = self.linear_operator()
        return float(spla.svds(op, k=1, return_singular_vectors=False, tol=1e-6,
                               v0=arpack_start(min(op.shape), op.dtype))[0])


@dataclass
class LapRow:
    lam: float
    eps: float
    value: float
    f_norm: float
    g_norm: float
    gated: bool
    bs_norm: float = 0.0

    def as_csv(self) -> list:
        return [self.lam, self.eps, self.value, self.f_norm, self.g_norm, int(self.gated)]


LAP_COLUMNS = ("lambda", "eps", "value", "f_norm", "g_norm", "gated")


@dataclass
class LapScan:
    rows: list
    q: float
    gate_norms: dict = field(default_factory=dict)

    def values(self, lam: float) -> dict:
        return {r.eps: r.value for r in self.rows if r.lam == lam}

    def stabilization(self) -> float:
        """Largest relative change between the two smallest ``eps`` over ``lambda``."""
        worst = 0.0
        for lam in sorted({r.lam for r in self.rows}):
            vals = self.values(lam)
            e = sorted(vals)
            if len(e) < 2:
                continue
            a, b = vals[e[0]], vals[e[1]]
            ref = max(abs(a), abs(b))
            if ref > 0:
                worst = max(worst, abs(a - b) / ref)
        return worst


def check_mid_gap(J: Sequence[float], n: int = N3, sep: float = 0.1) -> None:
    for lam in J:
        k = nearest_level(lam, n)
        dist = min(abs(lam - (2 * j + n)) for j in (max(k - 1, 0), k, k + 1))
        if dist < sep:
            raise ValueError(f"lambda = {lam} lies within {sep} of a threshold")


def lap_bilinear_scan(J: Sequence[float], eps_list: Sequence[float], f: LayeredFunction, g: LayeredFunction,
                      V: LayeredPotential | None = None, q: float = 4.0, grid: QuadratureGrid | None = None,
                      k_max_v: int = 24, m_max_v: int | None = None, neumann_tol: float = 1e-12,
                      max_terms: int = 200) -> LapScan:
    """``|<R(lambda + i eps) f, g>| / (||f||_Xq ||g||_Xq)`` over ``J x eps_list``.

    For ``V != 0`` the perturbed resolvent comes from
    ``R = R0 - R0 A (1 + Q)^{-1} B R0`` with ``A = V^{1/2}``, ``B = |V|^{1/2}``,
    ``Q = B R0 A``; the series for ``(1 + Q)^{-1}`` is only summed when the
    truncated norm of ``Q`` plus its level-tail bound is below 1.
    """
    check_mid_gap(J)
    if grid is None:
        raise ValueError("a planar grid is needed for the mixed norms")
    spec = MixedNormSpec("Xq", q)
    fn = mixed_norm(f, spec, grid)
    gn = mixed_norm(g, spec, grid)
    rows, gates = [], {}
    if V is not None:
        vvals = V.values(grid, f.axial)
        m_cap = m_max_v if m_max_v is not None else grid.n_theta // 2 - 1 - k_max_v
        fch = f.channels(grid)
        gch = g.channels(grid)
    for lam in J:
        for eps in eps_list:
            z = complex(lam, eps)
            u = layered_resolvent_apply(z, f)
            val = u.pair(g)
            if V is not None:
                op = BSOperator(z, grid, f.axial, vvals, k_max_v, m_cap)
                bs = op.norm() + op.tail_bound()
                gates[(lam, eps)] = bs
                if not bs < 1.0:
                    raise SmallnessGateError(
                        f"||B R0 A|| <= {bs:.3f} at lambda={lam}, eps={eps}: perturbed resolvent refused"
                    )
                phi = op.half * u.to_grid(grid, fch)
                psi = _neumann(op.apply, phi, grid, f.axial, neumann_tol, max_terms)
                u_star = layered_resolvent_apply(np.conj(z), g).to_grid(grid, gch)
                w = grid.weights[:, :, None] * f.axial.h
                val -= complex(np.sum(w * op.half * op.sgn * psi * np.conj(u_star)))
            rows.append(LapRow(float(lam), float(eps), abs(val) / (fn * gn), fn, gn, V is not None,
                               gates.get((lam, eps), 0.0)))
    return LapScan(rows, q, gates)


def _neumann(Q, phi, grid, axial, tol, max_terms):
    """``(1 + Q)^{-1} phi`` by the alternating series."""
    w = grid.weights[:, :, None] * axial.h
    nrm = lambda x: math.sqrt(float(np.sum(w * np.abs(x) ** 2)))
    total = phi.copy()
    term = phi
    ref = max(nrm(phi), 1e-300)
    for _ in range(max_terms):
        term = -Q(term)
        total = total + term
        if nrm(term) <= tol * ref:
            return total
    raise SmallnessGateError("Neumann series did not converge")
