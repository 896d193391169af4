"""Landau levels in the plane: eigenvalues, eigenfunctions, projection kernels,
exponent functions and the polar quadrature grid everything else runs on.

Conventions
-----------
The transverse operator is ``(-i d/dx + y/2)**2 + (-i d/dy - x/2)**2`` (unit
field, symmetric gauge).  Eigenfunctions are labelled by the level ``k`` and a
guiding-centre index ``m >= 0``; the angular momentum is ``l = m - k`` and

    phi_{k,m}(r, theta) = ell_{min(k,m)}^{|l|}(r**2 / 2) * exp(i l theta) / sqrt(2 pi)

where ``ell_n^a(s) = sqrt(n!/(n+a)!) s**(a/2) exp(-s/2) L_n^a(s)`` is the
orthonormal Laguerre function.  The level-``k`` projection kernel is

    P_k(x, y) = ell_k^0(|x-y|**2 / 2) * exp(-i (x1 y2 - x2 y1) / 2) / (2 pi)

with the phase sign fixed by agreement with the eigenfunction sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.special import gammaln

Exponent = Union[int, float, Fraction]

#: Lebesgue exponent infinity.  IEEE infinity is a distinct value, never a
#: "large float", and compares correctly with finite exponents.
INFINITY = math.inf

TWO_PI = 2.0 * math.pi


class GridError(ValueError):
    """Grid parameters are invalid or the grid failed self-calibration."""


# ── levels and exponents ──────────────────────────────────────────────


@dataclass(frozen=True, order=True)
class LevelIndex:
    k: int
    n: int = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"level index must be a nonnegative integer, got {self.k!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"half-dimension must be a positive integer, got {self.n!r}")

    @property
    def eigenvalue(self) -> int:
        return 2 * self.k + self.n


@dataclass(frozen=True)
class BasisTruncation:
    k_max: int
    m_max: int

    def __post_init__(self):
        if self.k_max < 0 or self.m_max < 0:
            raise ValueError("truncation indices must be nonnegative")

    @property
    def dimension(self) -> int:
        return (self.k_max + 1) * (self.m_max + 1)


def landau_eigenvalue(idx: LevelIndex) -> int:
    """Energy ``2k + n`` of a Landau level."""
    return 2 * idx.k + idx.n


def _as_level(k: Union[int, LevelIndex], n: int = 1) -> LevelIndex:
    return k if isinstance(k, LevelIndex) else LevelIndex(int(k), n)


def dual_exponent(r: Exponent) -> Exponent:
    """``q = 2 r' = 2r / (r - 1)``; maps ``r = 1`` to infinity and infinity to 2."""
    if r == INFINITY:
        return 2
    if r == 1:
        return INFINITY
    if r < 1:
        raise ValueError(f"exponent must be >= 1, got {r}")
    if isinstance(r, int):
        r = Fraction(r)
    return 2 * r / (r - 1)


def nu_exponent(d: int, r: Exponent) -> Exponent:
    """Cluster-width exponent, piecewise in ``r`` with breakpoint ``(d+1)/2``.

    Exact when ``r`` is an int or Fraction.
    """
    if d < 2:
        raise ValueError("dimension must be >= 2")
    half_d = Fraction(d, 2)
    if r < half_d:
        raise ValueError(f"r must be >= d/2 = {float(half_d)}, got {r}")
    if r == INFINITY:
        return 0
    if r <= Fraction(d + 1, 2):
        return Fraction(d) / (2 * r) - 1 if not isinstance(r, float) else d / (2 * r) - 1
    return -Fraction(1) / (2 * r) if not isinstance(r, float) else -1 / (2 * r)


def rho_exponent(d: int, q: Exponent) -> Exponent:
    """Projection-estimate exponent, piecewise in ``q`` with breakpoint
    ``2(d+1)/(d-1)`` where it attains its minimum ``-1/(d+1)``."""
    if d < 2:
        raise ValueError("dimension must be >= 2")
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    exact = not isinstance(q, float)
    if q == INFINITY:
        return Fraction(d - 2, 2)
    if q <= Fraction(2 * (d + 1), d - 1):
        return Fraction(1) / q - Fraction(1, 2) if exact else 1 / q - 0.5
    return Fraction(d - 2, 2) - Fraction(d) / q if exact else (d - 2) / 2 - d / q


@dataclass(frozen=True)
class ExponentTable:
    """Exponent bookkeeping for one ``(d, r, q)`` triple with ``q = 2 r'``."""

    d: int
    r: Exponent | None = None
    q: Exponent | None = None

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("dimension must be >= 2")
        if self.r is None and self.q is None:
            raise ValueError("supply r or q")
        if self.r is not None and self.q is not None:
            if not math.isclose(float(dual_exponent(self.r)), float(self.q), rel_tol=1e-12):
                raise ValueError(f"q={self.q} is not 2r' for r={self.r}")

    @property
    def q_value(self) -> Exponent:
        return self.q if self.q is not None else dual_exponent(self.r)

    @property
    def r_value(self) -> Exponent:
        if self.r is not None:
            return self.r
        q = self.q
        if q == INFINITY:
            return 1
        if q == 2:
            return INFINITY
        return q / (q - 2)

    @property
    def nu(self) -> Exponent:
        return nu_exponent(self.d, self.r_value)

    @property
    def rho(self) -> Exponent:
        return rho_exponent(self.d, self.q_value)


# ── Laguerre functions ────────────────────────────────────────────────

_RESCALE = 1e150


def arpack_start(n: int, dtype=float) -> np.ndarray:
    """Fixed ARPACK start vector; without one ARPACK draws from an internal RNG
    whose state depends on earlier calls, and results drift in the last digits."""
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    if np.issubdtype(np.dtype(dtype), np.complexfloating):
        v = v + 1j * rng.standard_normal(n)
    return v


def laguerre_functions(n_max: int, alpha: int, s) -> np.ndarray:
    """Orthonormal Laguerre functions ``ell_n^alpha(s)`` for ``n = 0..n_max``.

    Upward three-term recurrence on the normalised functions themselves; the
    ``s**(alpha/2) exp(-s/2)`` weight lives in a per-point log scale that is
    only exponentiated at the end, so nothing overflows for large ``n`` or ``s``.
    Returns an array of shape ``(n_max + 1,) + s.shape``.
    """
    s = np.asarray(s, dtype=float)
    flat = s.ravel()
    out = np.zeros((n_max + 1, flat.size))
    log0 = -0.5 * flat - 0.5 * gammaln(alpha + 1.0)
    if alpha > 0:
        with np.errstate(divide="ignore"):
            log0 = log0 + 0.5 * alpha * np.log(flat)
    zero = ~np.isfinite(log0)
    log0 = np.where(zero, 0.0, log0)
    scale = log0.copy()
    prev = np.zeros_like(flat)
    cur = np.where(zero, 0.0, 1.0)
    out[0] = cur * np.exp(scale)
    for j in range(1, n_max + 1):
        nxt = ((2 * j - 1 + alpha - flat) * cur - math.sqrt((j - 1) * (j - 1 + alpha)) * prev) / math.sqrt(
            j * (j + alpha)
        )
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            cur[big] /= _RESCALE
            prev[big] /= _RESCALE
            scale[big] += math.log(_RESCALE)
        with np.errstate(over="ignore", under="ignore"):
            out[j] = cur * np.exp(scale)
    return out.reshape((n_max + 1,) + s.shape)


def radial_function(k: int, m: int, r) -> np.ndarray:
    """Radial profile of ``phi_{k,m}`` (real), including the ``1/sqrt(2 pi)``."""
    alpha = abs(m - k)
    n = min(k, m)
    r = np.asarray(r, dtype=float)
    return laguerre_functions(n, alpha, 0.5 * r * r)[n] / math.sqrt(TWO_PI)


def eigenfunction_eval(idx: Union[LevelIndex, int], m: int, x) -> np.ndarray:
    """Evaluate ``phi_{k,m}`` at planar point(s) ``x`` (last axis of length 2)."""
    idx = _as_level(idx)
    if idx.n != 1:
        raise ValueError("eigenfunctions are implemented for the planar case n = 1 only")
    if m < 0:
        raise ValueError("guiding-centre index m must be nonnegative")
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(x[..., 1], x[..., 0])
    return radial_function(idx.k, m, r) * np.exp(1j * (m - idx.k) * theta)


def projection_kernel(idx: Union[LevelIndex, int], x, y) -> np.ndarray:
    """Integral kernel of the orthogonal projection onto level ``k``."""
    idx = _as_level(idx)
    if idx.n != 1:
        raise ValueError("projection kernels are implemented for the planar case n = 1 only")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx = x[..., 0] - y[..., 0]
    dy = x[..., 1] - y[..., 1]
    s = 0.5 * (dx * dx + dy * dy)
    cross = x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0]
    return laguerre_functions(idx.k, 0, s)[idx.k] * np.exp(-0.5j * cross) / TWO_PI


def classical_radius(k: int, m: int = 0) -> float:
    """Radius beyond which ``phi_{k,m}`` is in its exponentially decaying region."""
    return 2.0 * math.sqrt(k + m + 1)


# ── quadrature grid ───────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Polar product grid on the disk ``|x| <= extent``.

    Radial Gauss-Legendre nodes times a uniform angular grid; angular sums are
    exact for trigonometric polynomials of degree below ``n_theta``, which is
    what makes the channel (angular-momentum) transforms exact.
    Values on the grid are arrays of shape ``(n_r, n_theta)``.
    """

    radii: np.ndarray
    radial_weights: np.ndarray  # Gauss-Legendre weight times r
    n_theta: int
    extent: float
    calibrated_level: int = -1
    calibrated_m: int = -1

    @property
    def n_r(self) -> int:
        return self.radii.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def theta(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n_theta) / self.n_theta

    @cached_property
    def weights(self) -> np.ndarray:
        """Area weights on the grid, shape ``(n_r, n_theta)``."""
        return np.outer(self.radial_weights, np.full(self.n_theta, TWO_PI / self.n_theta))

    @cached_property
    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.radii[:, None]
        return r * np.cos(self.theta)[None, :], r * np.sin(self.theta)[None, :]

    @property
    def points(self) -> np.ndarray:
        x, y = self.xy
        return np.stack([x.ravel(), y.ravel()], axis=-1)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def is_calibrated(self) -> bool:
        return self.calibrated_level >= 0

    def integrate(self, values) -> complex:
        return np.sum(self.weights * values)

    def lp_norm(self, values, p: Exponent) -> float:
        a = np.abs(values)
        if p == INFINITY:
            return float(a.max())
        return float(np.sum(self.weights * a**p) ** (1.0 / p))

    def inner(self, f, g) -> complex:
        """``<f, g> = int conj(f) g``."""
        return np.sum(self.weights * np.conj(f) * g)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(x, y)`` on the grid."""
        x, y = self.xy
        return func(x, y)

    def sample_eigenfunction(self, k: int, m: int) -> np.ndarray:
        rad = radial_function(k, m, self.radii)
        return rad[:, None] * np.exp(1j * (m - k) * self.theta)[None, :]


def _polar_grid(extent: float, density: float, n_theta_min: int = 0) -> QuadratureGrid:
    n_r = max(8, int(math.ceil(density * extent)))
    nodes, w = np.polynomial.legendre.leggauss(n_r)
    radii = 0.5 * extent * (nodes + 1.0)
    radial_weights = 0.5 * extent * w * radii
    n_theta = max(16, int(math.ceil(TWO_PI * extent * density)), n_theta_min)
    n_theta = 1 << (n_theta - 1).bit_length()
    return QuadratureGrid(radii, radial_weights, n_theta, float(extent))


def eigenfunction_mass(grid: QuadratureGrid, k: int, m: int) -> float:
    rad = radial_function(k, m, grid.radii)
    return float(TWO_PI * np.sum(grid.radial_weights * rad * rad))


def build_grid(
    extent: float,
    density: float,
    level: int = 0,
    m_max: int = 0,
    memory_budget: int = 4_000_000,
    tol: float = 1e-6,
) -> QuadratureGrid:
    """Build and self-calibrate a polar grid.

    The extent is widened so that ``phi_{level,0}`` and ``phi_{level,m_max}``
    keep mass ``>= 1 - 1e-8`` inside the disk; the angular resolution is raised
    to carry every channel ``|l| <= level + m_max``.  Calibration then checks
    the quadrature mass of those eigenfunctions against 1 within ``tol``.
    """
    if not (extent > 0 and density > 0) or not (math.isfinite(extent) and math.isfinite(density)):
        raise GridError(f"extent and density must be positive, got {extent}, {density}")
    if level < 0 or m_max < 0:
        raise GridError("level and m_max must be nonnegative")
    need = max(classical_radius(level, 0), classical_radius(level, m_max)) + 7.0
    extent = max(float(extent), need)
    grid = _polar_grid(extent, density, n_theta_min=2 * (level + m_max) + 4)
    if grid.size > memory_budget:
        raise GridError(
            f"grid with {grid.size} points exceeds the budget of {memory_budget} points "
            f"(extent {extent:.1f}, density {density})"
        )
    return calibrate(grid, level, m_max, tol)


def calibrate(grid: QuadratureGrid, level: int = 0, m_max: int = 0, tol: float = 1e-6) -> QuadratureGrid:
    """Mass test on ``phi_{k,0}`` / ``phi_{k,m_max}`` for every ``k <= level``."""
    ms = sorted({0, m_max})
    for k in range(level + 1):
        for m in ms:
            mass = eigenfunction_mass(grid, k, m)
            if abs(mass - 1.0) > tol:
                raise GridError(
                    f"grid under-resolves phi_({k},{m}): quadrature mass {mass:.10f} "
                    f"(extent {grid.extent:.2f}, n_r {grid.n_r}, n_theta {grid.n_theta})"
                )
    area = grid.area
    if abs(area - math.pi * grid.extent**2) > 0.01 * math.pi * grid.extent**2:
        raise GridError("grid weights do not reproduce the disk area")
    return QuadratureGrid(grid.radii, grid.radial_weights, grid.n_theta, grid.extent, level, m_max)


def disk_grid(extent: float, n_r: int, n_theta: int) -> QuadratureGrid:
    """Uncalibrated polar grid with explicit resolution (for sandwiched operators
    whose inputs are supported inside the disk)."""
    if extent <= 0 or n_r < 1 or n_theta < 1:
        raise GridError("invalid disk grid parameters")
    nodes, w = np.polynomial.legendre.leggauss(n_r)
    radii = 0.5 * extent * (nodes + 1.0)
    return QuadratureGrid(radii, 0.5 * extent * w * radii, int(n_theta), float(extent))


# ── channel transforms ────────────────────────────────────────────────


@dataclass
class LevelChannels:
    """Angular-momentum channel decomposition of Landau levels on a polar grid.

    For level ``k`` and angular momentum ``l`` there is exactly one
    eigenfunction (``m = k + l``), so projecting onto level ``k`` reduces to an
    angular FFT followed by one radial inner product per channel.  Only
    channels with ``|l| < n_theta/2`` are representable.
    """

    grid: QuadratureGrid
    levels: Sequence[int]
    m_max: int | None = None
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.levels = [int(k) for k in self.levels]
        half = self.grid.n_theta // 2
        self.l_hi = half - 1
        if self.m_max is not None:
            self.l_hi = min(self.l_hi, self.m_max - min(self.levels))
        self._build()

    def channels(self, k: int) -> np.ndarray:
        lo = max(-k, -(self.grid.n_theta // 2 - 1))
        hi = self.l_hi if self.m_max is None else min(self.l_hi, self.m_max - k)
        return np.arange(lo, hi + 1)

    def _build(self):
        s = 0.5 * self.grid.radii**2
        k_top = max(self.levels)
        by_level = {k: self.channels(k) for k in self.levels}
        alphas = sorted({abs(int(l)) for ls in by_level.values() for l in ls})
        cache = {}
        for a in alphas:
            cache[a] = laguerre_functions(k_top, a, s) / math.sqrt(TWO_PI)
        for k, ls in by_level.items():
            tab = np.empty((ls.size, self.grid.n_r))
            for i, l in enumerate(ls):
                a = abs(int(l))
                n = k if l >= 0 else k + l
                tab[i] = cache[a][n]
            self._tables[k] = (ls, ls % self.grid.n_theta, tab)

    def table(self, k: int):
        """``(l values, fft indices, radial table of shape (n_l, n_r))``."""
        return self._tables[k]

    def fourier(self, f: np.ndarray) -> np.ndarray:
        """Angular Fourier coefficients, shape ``(n_r, n_theta)`` (+ trailing axes)."""
        return np.fft.fft(f, axis=1) / self.grid.n_theta

    def analyze(self, fhat: np.ndarray, k: int) -> np.ndarray:
        """Coefficients ``<phi_{k,k+l}, f>`` from angular Fourier data ``fhat``."""
        ls, idx, tab = self._tables[k]
        sel = fhat[:, idx]  # (n_r, n_l, ...)
        w = TWO_PI * self.grid.radial_weights
        return np.einsum("lr,r,rl...->l...", tab, w, sel)

    def synthesize_hat(self, coeffs: dict, out_hat: np.ndarray | None = None) -> np.ndarray:
        """Accumulate ``sum_k sum_l c_{k,l} R_{k,l}(r) e^{il theta}`` in Fourier space."""
        some = next(iter(coeffs.values()))
        trailing = some.shape[1:]
        if out_hat is None:
            out_hat = np.zeros(self.grid.shape + trailing, dtype=complex)
        for k, c in coeffs.items():
            ls, idx, tab = self._tables[k]
            out_hat[:, idx] += np.einsum("lr,l...->rl...", tab, c)
        return out_hat

    def to_grid(self, fhat: np.ndarray) -> np.ndarray:
        return np.fft.ifft(fhat, axis=1) * self.grid.n_theta

    def project(self, f: np.ndarray, k: int) -> np.ndarray:
        fhat = self.fourier(f)
        return self.to_grid(self.synthesize_hat({k: self.analyze(fhat, k)}))

    def apply_spectral(self, f: np.ndarray, multipliers: dict) -> np.ndarray:
        """``sum_k multipliers[k] * P_k f`` for the levels in ``multipliers``."""
        fhat = self.fourier(f)
        coeffs = {k: mult * self.analyze(fhat, k) for k, mult in multipliers.items()}
        return self.to_grid(self.synthesize_hat(coeffs))
