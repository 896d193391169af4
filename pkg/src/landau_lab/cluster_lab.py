"""Perturbed Landau clusters in the plane.

Galerkin spectra of ``H0 + V`` on a window of levels, Birman-Schwinger
operators ``|V|^{1/2} R0(z) V^{1/2}``, the nonlinear power iteration for
``||P_k||_{q' -> q}``, the extremal-potential construction and the
sharpness certificate, plus log-log scaling fits.

All potentials are real.  Everything is computed on a polar
:class:`~landau_lab.landau_core.QuadratureGrid`; radial potentials take a
block-diagonal fast path (one block per angular momentum).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .landau_core import (
    INFINITY,
    TWO_PI,
    BasisTruncation,
    Exponent,
    LevelChannels,
    LevelIndex,
    QuadratureGrid,
    arpack_start,
    build_grid,
    dual_exponent,
    laguerre_functions,
    nu_exponent,
    rho_exponent,
)

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian", "bump", "power_tail", "tabulated", "extremal")
DENSE_LIMIT = 4000
BOUNDARY_TOL = 1e-9


class ClusterError(RuntimeError):
    """A cluster computation could not be carried out as requested."""


class TruncationError(ClusterError):
    """A truncation certificate failed (level tail or potential mass)."""


class DegenerateFitError(ValueError):
    """Too few usable samples for a log-log fit."""


# ── potentials ────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Declarative real potential.

    Analytic families take ``params``: ``width`` and optional ``center`` for
    ``gaussian``; ``radius``/``center`` for ``bump``; ``width``/``power`` for
    ``power_tail``.  ``tabulated`` and ``extremal`` are bound to the grid they
    were built on: ``table`` holds ``V`` (tabulated) or ``W >= 0`` (extremal,
    ``V = -scale * W**2``).  ``sign='signed'`` multiplies an analytic profile
    by ``(x - c_x) / width``.
    """

    family: str
    params: Mapping = field(default_factory=dict)
    r: Exponent = 1.5
    sign: str = "negative"
    scale: float = 1.0
    grid: QuadratureGrid | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.sign not in ("negative", "signed"):
            raise ValueError("sign must be 'negative' or 'signed'")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")
        if self.family in ("tabulated", "extremal"):
            if self.grid is None or self.table is None:
                raise ValueError(f"{self.family} potentials need a grid and a table")
            if np.shape(self.table) != self.grid.shape:
                raise ValueError("table does not match its grid")
        if self.family == "extremal":
            if self.sign != "negative":
                raise ValueError("extremal potentials are nonpositive")
            if np.any(np.asarray(self.table) < 0):
                raise ValueError("extremal W must be nonnegative")

    # profile ----------------------------------------------------------
    @property
    def center(self) -> tuple[float, float]:
        c = self.params.get("center", (0.0, 0.0))
        return float(c[0]), float(c[1])

    def _profile(self, x, y):
        cx, cy = self.center
        dx, dy = x - cx, y - cy
        rho2 = dx * dx + dy * dy
        if self.family == "gaussian":
            w = float(self.params.get("width", 1.0))
            prof = np.exp(-0.5 * rho2 / w**2)
        elif self.family == "bump":
            a = float(self.params.get("radius", 1.0))
            w = a
            t = rho2 / a**2
            inside = t < 1.0
            prof = np.zeros_like(rho2)
            prof[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside]))
        else:
            w = float(self.params.get("width", 1.0))
            p = float(self.params.get("power", 4.0))
            prof = (1.0 + rho2 / w**2) ** (-0.5 * p)
        if self.sign == "signed":
            prof = prof * dx / w
        return prof

    def values(self, grid: QuadratureGrid) -> np.ndarray:
        """Real potential values on ``grid``."""
        if self.family in ("tabulated", "extremal"):
            if not _same_grid(grid, self.grid):
                raise ValueError(f"{self.family} potential is bound to the grid it was built on")
            t = np.asarray(self.table, dtype=float)
            return -self.scale * t * t if self.family == "extremal" else self.scale * t
        x, y = grid.xy
        prof = self._profile(x, y)
        return -self.scale * prof if self.sign == "negative" else self.scale * prof

    def lr_norm(self, grid: QuadratureGrid | None = None, r: Exponent | None = None) -> float:
        grid = grid if grid is not None else self.grid
        if grid is None:
            raise ValueError("need a grid for the norm of an analytic potential")
        return grid.lp_norm(self.values(grid), self.r if r is None else r)

    def outside_fraction(self, extent: float) -> float:
        """Fraction of ``int |V|`` outside the disk of radius ``extent``."""
        if self.family in ("tabulated", "extremal"):
            return 0.0
        c = math.hypot(*self.center)
        if self.family == "gaussian":
            w = float(self.params.get("width", 1.0))
            gap = extent - c
            return 1.0 if gap <= 0 else math.exp(-0.5 * gap * gap / w**2)
        if self.family == "bump":
            return 0.0 if c + float(self.params.get("radius", 1.0)) <= extent else 1.0
        w = float(self.params.get("width", 1.0))
        p = float(self.params.get("power", 4.0))
        if p <= 2:
            return 1.0
        gap = max(extent - c, 0.0)
        return (1.0 + gap * gap / w**2) ** (1.0 - 0.5 * p)

    def support_radius(self, tol: float = 1e-16) -> float:
        """Radius outside which ``|V| < tol * max|V|``."""
        c = math.hypot(*self.center)
        if self.family in ("tabulated", "extremal"):
            return self.grid.extent
        if self.family == "gaussian":
            return c + float(self.params.get("width", 1.0)) * math.sqrt(2.0 * math.log(1.0 / tol))
        if self.family == "bump":
            return c + float(self.params.get("radius", 1.0))
        w = float(self.params.get("width", 1.0))
        p = float(self.params.get("power", 4.0))
        return c + w * math.sqrt(tol ** (-2.0 / p) - 1.0)

    def scaled(self, factor: float) -> "PotentialSpec":
        return replace(self, scale=self.scale * factor)

    def is_radial(self, grid: QuadratureGrid, tol: float = 1e-12) -> bool:
        if self.family not in ("tabulated", "extremal") and self.sign == "negative" and self.center == (0.0, 0.0):
            return True
        v = self.values(grid)
        spread = np.abs(v - v.mean(axis=1, keepdims=True)).max()
        return bool(spread <= tol * max(np.abs(v).max(), 1e-300))


def _same_grid(a: QuadratureGrid, b: QuadratureGrid) -> bool:
    return a is b or (
        a.n_theta == b.n_theta and a.n_r == b.n_r and np.array_equal(a.radii, b.radii)
    )


def check_potential_on_grid(V: PotentialSpec, grid: QuadratureGrid, tol: float = 1e-6) -> None:
    if V.family not in ("tabulated", "extremal") and V.outside_fraction(grid.extent) > tol:
        raise TruncationError(
            f"potential mass outside the grid extent {grid.extent:.2f} exceeds {tol:.0e}"
        )


def gaussian_potential(amplitude: float, width: float = 1.0, r: Exponent = 1.5,
                       center=(0.0, 0.0)) -> PotentialSpec:
    return PotentialSpec("gaussian", {"width": width, "center": tuple(center)}, r, "negative", amplitude)


# ── radial tables and Galerkin blocks ─────────────────────────────────


def radial_rows(basis: Sequence[tuple[int, int]], radii: np.ndarray) -> np.ndarray:
    """Radial profiles of ``phi_{k,m}`` for each ``(k, m)`` in ``basis`` (rows)."""
    s = 0.5 * np.asarray(radii) ** 2
    out = np.empty((len(basis), s.size))
    by_alpha: dict[int, list[int]] = {}
    for i, (k, m) in enumerate(basis):
        by_alpha.setdefault(abs(m - k), []).append(i)
    for a, rows in by_alpha.items():
        n_top = max(min(basis[i]) for i in rows)
        tab = laguerre_functions(n_top, a, s)
        for i in rows:
            out[i] = tab[min(basis[i])]
    return out / math.sqrt(TWO_PI)


def _angular_modes(v: np.ndarray, n_theta: int, tol: float = 1e-13) -> dict[int, np.ndarray]:
    """Significant angular Fourier modes ``j -> vhat_j(r)`` of real data ``v``."""
    vhat = np.fft.fft(v, axis=1) / n_theta
    scale = max(np.abs(vhat).max(), 1e-300)
    out = {}
    for idx in range(n_theta):
        j = idx if idx < n_theta // 2 else idx - n_theta
        col = vhat[:, idx]
        if np.abs(col).max() > tol * scale:
            out[j] = col
    return out


def potential_matrix(basis: Sequence[tuple[int, int]], v: np.ndarray, grid: QuadratureGrid) -> np.ndarray:
    """``<phi_b, V phi_b'>`` for real ``V`` sampled on ``grid`` (Hermitian)."""
    R = radial_rows(basis, grid.radii)
    ls = np.array([m - k for k, m in basis])
    dl = ls[:, None] - ls[None, :]
    w = TWO_PI * grid.radial_weights
    M = np.zeros((len(basis), len(basis)), dtype=complex)
    for j, col in _angular_modes(v, grid.n_theta).items():
        mask = dl == j
        if not mask.any():
            continue
        A = (R * (w * col)) @ R.T
        M[mask] += A[mask]
    return M


def _radial_profile(v: np.ndarray) -> np.ndarray:
    return v.mean(axis=1)


@dataclass
class GalerkinBlock:
    basis: list
    matrix: np.ndarray


def galerkin_blocks(levels: Sequence[int], m_max: int, V: PotentialSpec, grid: QuadratureGrid,
                    radial: bool | None = None) -> list[GalerkinBlock]:
    """Matrix of ``H0 + V`` on ``span{phi_{k,m}: k in levels, m <= m_max}``,
    split into independent blocks."""
    v = V.values(grid)
    if radial is None:
        radial = V.is_radial(grid)
    levels = list(levels)
    blocks = []
    if radial:
        prof = _radial_profile(v)
        w = TWO_PI * grid.radial_weights * prof
        l_lo, l_hi = -max(levels), m_max - min(levels)
        for l in range(l_lo, l_hi + 1):
            basis = [(k, k + l) for k in levels if 0 <= k + l <= m_max]
            if not basis:
                continue
            R = radial_rows(basis, grid.radii)
            M = (R * w) @ R.T
            M = 0.5 * (M + M.T) + np.diag([2.0 * k + 1.0 for k, _ in basis])
            blocks.append(GalerkinBlock(basis, M.astype(complex)))
        return blocks
    basis = [(k, m) for k in levels for m in range(m_max + 1)]
    M = potential_matrix(basis, v, grid)
    M = 0.5 * (M + M.conj().T) + np.diag([2.0 * k + 1.0 for k, _ in basis])
    pattern = csr_matrix(np.abs(M) > 1e-14 * max(np.abs(M).max(), 1.0))
    ncomp, labels = connected_components(pattern, directed=False)
    for c in range(ncomp):
        sel = np.flatnonzero(labels == c)
        blocks.append(GalerkinBlock([basis[i] for i in sel], M[np.ix_(sel, sel)]))
    return blocks


def _block_eigenvalues(M: np.ndarray, sigma: float, count: int, dim_cap: int) -> np.ndarray:
    n = M.shape[0]
    if n <= DENSE_LIMIT:
        return sla.eigh(M, eigvals_only=True)
    if n > dim_cap:
        raise ClusterError(f"Galerkin block of dimension {n} exceeds the cap {dim_cap}")
    try:
        w = spla.eigsh(M, k=min(count, n - 2), sigma=sigma, which="LM", return_eigenvectors=False,
                      v0=arpack_start(n, M.dtype))
    except spla.ArpackError as exc:  # pragma: no cover - solver failure path
        raise ClusterError(f"eigensolver failed: {exc}") from exc
    return np.sort(w)


def assemble_projected_potential(k0: LevelIndex | int, V: PotentialSpec, trunc: BasisTruncation,
                                 grid: QuadratureGrid) -> np.ndarray:
    """``<phi_{k0,m}, V phi_{k0,m'}>`` for ``m, m' <= m_max``."""
    k = k0.k if isinstance(k0, LevelIndex) else int(k0)
    if not grid.is_calibrated:
        raise ClusterError("grid has not passed self-calibration")
    check_potential_on_grid(V, grid)
    basis = [(k, m) for m in range(trunc.m_max + 1)]
    M = potential_matrix(basis, V.values(grid), grid)
    return 0.5 * (M + M.conj().T)


# ── cluster spectra ───────────────────────────────────────────────────


@dataclass
class ClusterReport:
    k0: int
    eigenvalues: np.ndarray
    delta_max: float
    bound_rhs: float = float("nan")
    margin: float = float("nan")
    window: int = 2
    v_norm: float = float("nan")
    r: Exponent = 1.5
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    all_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    window_change: float = float("nan")

    @property
    def lam(self) -> int:
        return 2 * self.k0 + 1

    def with_bound(self, C: float) -> "ClusterReport":
        rhs = C * self.v_norm * self.lam ** float(nu_exponent(2, self.r))
        return replace(self, bound_rhs=rhs, margin=rhs - self.delta_max)

    def to_dict(self) -> dict:
        return {
            "k0": self.k0,
            "lambda": self.lam,
            "n_eigenvalues": int(self.eigenvalues.size),
            "delta_max": float(self.delta_max),
            "bound_rhs": float(self.bound_rhs),
            "margin": float(self.margin),
            "window": self.window,
            "v_norm": float(self.v_norm),
            "window_change": float(self.window_change),
            "boundary_flagged": int(np.count_nonzero(self.boundary)),
        }


def distance_to_levels(E, n: int = 1) -> np.ndarray:
    """``dist(E, {2k + n : k >= 0})`` (the cluster width of each eigenvalue)."""
    E = np.asarray(E)
    k = np.clip(np.round((E.real - n) / 2.0), 0, None)
    return np.abs(E - (2.0 * k + n))


def cluster_spectrum(k0: LevelIndex | int, V: PotentialSpec, trunc: BasisTruncation, grid: QuadratureGrid,
                     window: int = 2, dim_cap: int = 12000) -> ClusterReport:
    """Eigenvalues of ``H0 + V`` in the cluster ``|Re z - lambda_k0| <= 1``.

    The Galerkin space is levels ``k0-window .. k0+window`` with ``m <= m_max``.
    """
    k = k0.k if isinstance(k0, LevelIndex) else int(k0)
    if window < 0 or k - window < 0:
        raise ValueError(f"window {window} reaches below level 0 for k0={k}")
    check_potential_on_grid(V, grid)
    levels = range(k - window, k + window + 1)
    lam = 2.0 * k + 1.0
    eig = []
    for blk in galerkin_blocks(levels, trunc.m_max, V, grid):
        eig.append(_block_eigenvalues(blk.matrix, lam, 3 * (trunc.m_max + 1), dim_cap))
    all_eig = np.sort(np.concatenate(eig)) if eig else np.zeros(0)
    dist = np.abs(lam - all_eig)
    inside = dist <= 1.0 + BOUNDARY_TOL
    cluster = all_eig[inside]
    boundary = np.abs(dist[inside] - 1.0) <= BOUNDARY_TOL
    delta = float(distance_to_levels(cluster).max()) if cluster.size else 0.0
    vn = V.lr_norm(grid)
    return ClusterReport(k, cluster, delta, window=window, v_norm=vn, r=V.r, boundary=boundary,
                         all_eigenvalues=all_eig)


def converged_cluster_spectrum(k0: int, V: PotentialSpec, trunc: BasisTruncation, grid: QuadratureGrid,
                               window: int = 2, rel_tol: float = 0.01, max_window: int = 16) -> ClusterReport:
    """Cluster spectrum whose width changes by less than ``rel_tol`` when the
    window is doubled (the window is clamped at level 0)."""
    w = min(window, k0)
    rep = cluster_spectrum(k0, V, trunc, grid, w)
    while True:
        w2 = min(2 * max(w, 1), k0) if k0 > 0 else 0
        if w2 == w:
            w2 = 2 * max(w, 1)
            if k0 - w2 < 0:
                return replace(rep, window_change=0.0)
        rep2 = cluster_spectrum(k0, V, trunc, grid, w2)
        ref = max(rep2.delta_max, 1e-300)
        change = abs(rep2.delta_max - rep.delta_max) / ref
        if change < rel_tol or rep2.delta_max == rep.delta_max:
            return replace(rep, window_change=change)
        if w2 >= max_window:
            raise ClusterError(f"cluster width for k0={k0} not stable under window doubling ({change:.2%})")
        w, rep = w2, rep2


def m_max_for(V: PotentialSpec, k_top: int, margin: float = 7.0) -> int:
    """Guiding-centre cutoff such that every ``phi_{k,m}`` with ``k <= k_top``
    and ``m > m_max`` lives outside the support of ``V``."""
    rad = min(V.support_radius(), V.grid.extent if V.grid is not None else math.inf)
    return int(math.ceil(0.5 * (rad + margin + math.sqrt(2 * k_top + 1)) ** 2))


def grid_for_potential(V: PotentialSpec, k_top: int, density_floor: float = 6.0) -> QuadratureGrid:
    """Polar grid covering the support of an analytic ``V`` and resolving
    products of level-``k_top`` radial functions against it."""
    extent = V.support_radius()
    kappa = 2.0 * math.sqrt(2 * k_top + 1) + 4.0
    n_r = int(math.ceil(kappa * extent / 3.0)) + 40
    density = max(density_floor, n_r / extent)
    from .landau_core import _polar_grid, calibrate

    grid = _polar_grid(extent, density)
    return calibrate(grid, 0, 0, tol=1e-6) if extent >= 9.0 else grid


# ── Birman-Schwinger operators ────────────────────────────────────────


@dataclass
class BirmanSchwingerResult:
    norm: float
    tail_bound: float
    k_max: int
    top_eigenvalue: float = float("nan")


def _bs_channel_matrices(z: complex, absv: np.ndarray, grid: QuadratureGrid, k_max: int, m_max: int,
                         levels=None):
    """Per-channel reduced matrices ``S W^T D W S`` for radial ``|V|`` (real 1D profile)."""
    sq = np.sqrt(TWO_PI * grid.radial_weights * absv)
    keep = sq > 0
    sq = sq[keep]
    radii = grid.radii[keep]
    s = 0.5 * radii**2
    alphas_cache: dict[int, np.ndarray] = {}
    level_set = None if levels is None else set(levels)
    for l in range(-k_max, m_max + 1):
        ks = [k for k in range(max(0, -l), k_max + 1) if k + l <= m_max]
        if level_set is not None:
            ks = [k for k in ks if k in level_set]
        if not ks:
            continue
        a = abs(l)
        tab = alphas_cache.get(a)
        if tab is None or tab.shape[0] <= k_max:
            tab = laguerre_functions(k_max, a, s) / math.sqrt(TWO_PI)
            alphas_cache = {a: tab}
        rows = np.array([tab[k if l >= 0 else k + l] for k in ks])  # (K, n_r)
        B = (rows * sq).T  # (n_r, K)
        U, S, Wt = np.linalg.svd(B, full_matrices=False)
        D = 1.0 / (2.0 * np.array(ks, dtype=float) + 1.0 - z)
        yield l, ks, (S[:, None] * (Wt * D) @ Wt.conj().T * S[None, :])


def _bs_dense_grid_operator(z: complex, v: np.ndarray, grid: QuadratureGrid, levels: Sequence[int],
                            m_max: int | None = None) -> np.ndarray:
    """Dense ``|V|^{1/2} R0(z) V^{1/2}`` restricted to ``levels``, in the
    symmetrised grid basis ``sqrt(w) f``."""
    ch = LevelChannels(grid, list(levels), m_max=m_max)
    w = grid.weights.ravel()
    absv = np.abs(v).ravel()
    half = np.sqrt(absv)
    sgn = np.sign(v).ravel()
    Q = np.zeros((grid.size, grid.size), dtype=complex)
    x, _ = grid.xy
    for k in levels:
        ls, idx, tab = ch.table(k)
        phase = np.exp(1j * np.outer(grid.theta, ls))  # (n_theta, n_l)
        Phi = (tab.T[:, None, :] * phase[None, :, :]).reshape(grid.size, ls.size)
        A = (np.sqrt(w) * half)[:, None] * Phi
        Q += (A @ A.conj().T) / (2.0 * k + 1.0 - z)
    return Q * sgn[None, :]


def birman_schwinger_operator(z: complex, V: PotentialSpec, grid: QuadratureGrid, levels: Sequence[int],
                              m_max: int | None = None) -> np.ndarray:
    """Dense discretised ``|V|^{1/2} sum_{k in levels} P_k/(lambda_k - z) V^{1/2}`` (small grids)."""
    return _bs_dense_grid_operator(z, V.values(grid), grid, levels, m_max)


def _bs_tail(z: complex, vmax: float, k_max: int) -> float:
    return vmax / abs(2.0 * (k_max + 1) + 1.0 - z) if np.isreal(z) and z.real < 2 * (k_max + 1) + 1 \
        else vmax / min(abs(2.0 * k + 1.0 - z) for k in range(k_max + 1, k_max + 2 + int(abs(z)) + 2))


def _bs_matrix_free(z: complex, v: np.ndarray, grid: QuadratureGrid, k_max: int, m_max: int,
                    hermitian: bool):
    levels = list(range(k_max + 1))
    ch = LevelChannels(grid, levels, m_max=m_max)
    half = np.sqrt(np.abs(v))
    sgn = np.sign(v)
    sw = np.sqrt(grid.weights)
    mult = {k: 1.0 / (2.0 * k + 1.0 - z) for k in levels}

    def matvec(x):
        f = x.reshape(grid.shape) / sw
        g = ch.apply_spectral(half * sgn * f if not hermitian else half * f, mult)
        return (sw * half * g).ravel()

    def rmatvec(x):
        f = x.reshape(grid.shape) / sw
        g = ch.apply_spectral(half * f, {k: np.conj(m) for k, m in mult.items()})
        return (sw * half * sgn * g).ravel()

    n = grid.size
    return spla.LinearOperator((n, n), matvec=matvec, rmatvec=rmatvec, dtype=complex)


def birman_schwinger_norm(z: complex, V: PotentialSpec, trunc: BasisTruncation, grid: QuadratureGrid,
                          tail_fraction: float = 0.1) -> BirmanSchwingerResult:
    """Operator norm of ``|V|^{1/2} R0(z) V^{1/2}`` with levels ``k <= k_max``.

    The levels above ``k_max`` contribute at most ``max|V| / dist(z, {lambda_k: k > k_max})``,
    reported as ``tail_bound``; a tail above ``tail_fraction`` of the norm is an error.
    The norm depends on ``|V|`` only, since ``sgn V`` is unitary on the support.
    """
    z = complex(z)
    if np.min(distance_to_levels(np.array([z]))) == 0.0:
        raise ClusterError(f"z = {z} lies on the unperturbed spectrum")
    check_potential_on_grid(V, grid)
    v = V.values(grid)
    vmax = float(np.abs(v).max())
    if vmax == 0.0:
        return BirmanSchwingerResult(0.0, 0.0, trunc.k_max, 0.0)
    k_max, m_max = trunc.k_max, trunc.m_max
    tail = _bs_tail(z, vmax, k_max)
    top = float("nan")
    if V.is_radial(grid):
        prof = np.abs(_radial_profile(v))
        best = 0.0
        for _, _, Q in _bs_channel_matrices(z, prof, grid, k_max, m_max):
            if z.imag == 0.0:
                ev = np.linalg.eigvalsh(0.5 * (Q + Q.conj().T).real)
                best = max(best, float(np.abs(ev).max()))
                top = max(top, float(ev.max())) if not math.isnan(top) else float(ev.max())
            else:
                best = max(best, float(np.linalg.norm(Q, 2)))
        norm = best
    else:
        op = _bs_matrix_free(z, v, grid, k_max, m_max, hermitian=(z.imag == 0.0))
        if z.imag == 0.0:
            ev = spla.eigsh(op, k=2, which="LM", return_eigenvectors=False, tol=1e-10,
                            v0=arpack_start(op.shape[0], op.dtype))
            norm = float(np.abs(ev).max())
            top = float(spla.eigsh(op, k=1, which="LA", return_eigenvectors=False, tol=1e-10,
                                   v0=arpack_start(op.shape[0], op.dtype))[0])
        else:
            norm = float(spla.svds(op, k=1, return_singular_vectors=False, tol=1e-10,
                                   v0=arpack_start(min(op.shape), op.dtype))[0])
    if tail > tail_fraction * norm:
        raise TruncationError(
            f"level tail bound {tail:.3g} exceeds {tail_fraction:.0%} of the norm {norm:.3g}; raise k_max"
        )
    return BirmanSchwingerResult(norm, tail, k_max, top)


def bs_truncation_for(z: complex, V: PotentialSpec, grid: QuadratureGrid, m_max: int,
                      tail_fraction: float = 0.05, guess_norm: float = 1.0) -> BasisTruncation:
    """Smallest ``k_max`` whose tail bound is below ``tail_fraction * guess_norm``."""
    vmax = float(np.abs(V.values(grid)).max())
    need = vmax / (tail_fraction * guess_norm)
    k_max = int(math.ceil(max(abs(z), 1.0)))
    while abs(2.0 * (k_max + 1) + 1.0 - z) < need:
        k_max += 1
    return BasisTruncation(k_max, m_max)


def top_bs_eigenvalue(a: float, V: PotentialSpec, grid: QuadratureGrid, k_max: int, m_max: int) -> float:
    """Largest eigenvalue of the truncated ``Q(a; V)`` for real ``a``.

    Levels above ``k_max`` add a positive semidefinite term once
    ``lambda_k > a``, so the truncated value is a lower bound for the full one.
    """
    v = V.values(grid)
    if V.is_radial(grid):
        prof = np.abs(_radial_profile(v))
        best = -math.inf
        for _, _, Q in _bs_channel_matrices(complex(a), prof, grid, k_max, m_max):
            best = max(best, float(np.linalg.eigvalsh(0.5 * (Q + Q.conj().T).real).max()))
        return best
    op = _bs_matrix_free(complex(a), v, grid, k_max, m_max, hermitian=True)
    return float(spla.eigsh(op, k=1, which="LA", return_eigenvectors=False, tol=1e-10,
                           v0=arpack_start(op.shape[0], op.dtype))[0].real)


# ── projection norms by nonlinear power iteration ─────────────────────


@dataclass
class PowerIterationResult:
    value: float
    history: list
    converged: bool
    f: np.ndarray
    g: np.ndarray  # P_k f
    start: str = ""


def _duality_map(g: np.ndarray, q: float, grid: QuadratureGrid) -> np.ndarray:
    """``|g|^{q-2} g`` normalised in ``L^{q'}``."""
    h = np.abs(g) ** (q - 2.0) * g
    qp = q / (q - 1.0)
    return h / grid.lp_norm(h, qp)


def power_iterate(channels: LevelChannels, k: int, q: float, f0: np.ndarray, rtol: float = 1e-5,
                  max_steps: int = 500) -> PowerIterationResult:
    grid = channels.grid
    qp = q / (q - 1.0)
    f = f0 / grid.lp_norm(f0, qp)
    g = channels.project(f, k)
    val = grid.lp_norm(g, q)
    hist = [val]
    converged = False
    for _ in range(max_steps):
        f = _duality_map(g, q, grid)
        g = channels.project(f, k)
        new = grid.lp_norm(g, q)
        hist.append(new)
        gain = (new - val) / max(val, 1e-300)
        val = max(val, new)
        if gain < rtol:
            converged = True
            break
    return PowerIterationResult(val, hist, converged, f, g)


def start_functions(grid: QuadratureGrid, k: int, n_random: int, rng: np.random.Generator) -> dict:
    """Initial guesses: a ring bump at the classical radius, the cyclotron
    orbit ``phi_{k,0}``, and smooth randomised bumps."""
    lam = 2 * k + 1
    x, y = grid.xy
    rr = np.hypot(x, y)
    starts = {"ring": np.exp(-0.5 * (rr - math.sqrt(2 * lam)) ** 2).astype(complex)}
    orbit = grid.sample_eigenfunction(k, 0)
    starts["orbit"] = np.abs(orbit) ** 2 * orbit
    for i in range(n_random):
        c = rng.uniform(-1, 1, size=2) * math.sqrt(2 * lam)
        amp = rng.normal(size=3) + 1j * rng.normal(size=3)
        f = np.zeros(grid.shape, dtype=complex)
        for j in range(3):
            cj = c + rng.normal(size=2)
            f += amp[j] * np.exp(-0.5 * ((x - cj[0]) ** 2 + (y - cj[1]) ** 2))
        starts[f"random{i}"] = f
    return starts


def projection_norm_estimate(k: LevelIndex | int, q: Exponent, grid: QuadratureGrid, n_random: int = 2,
                             seed: int = 0, rtol: float = 1e-5, max_steps: int = 500,
                             channels: LevelChannels | None = None) -> PowerIterationResult:
    """Lower bound for ``||P_k||_{L^{q'} -> L^q}`` by nonlinear power iteration.

    Each step applies ``P_k`` and the duality map ``g -> |g|^{q-2} g`` renormalised
    in ``L^{q'}``; the ratio ``||P_k f||_q / ||f||_{q'}`` never decreases.  The
    best of several starts is returned; ``converged`` is False if the step cap
    was hit.
    """
    k = k.k if isinstance(k, LevelIndex) else int(k)
    if q == INFINITY or q < 2:
        raise ValueError("q must lie in [2, inf)")
    q = float(q)
    channels = channels or LevelChannels(grid, [k])
    if q == 2.0:
        f = grid.sample_eigenfunction(k, 0)
        return PowerIterationResult(1.0, [1.0], True, f, f, "exact")
    rng = np.random.default_rng(seed)
    best = None
    for name, f0 in start_functions(grid, k, n_random, rng).items():
        res = power_iterate(channels, k, q, f0, rtol, max_steps)
        res.start = name
        if best is None or res.value > best.value * (1 + 1e-9):
            best = res
    if not best.converged:
        logger.warning("power iteration for k=%d, q=%g hit the step cap", k, q)
    return best


# ── extremal potentials and the sharpness certificate ─────────────────


@dataclass
class ExtremalResult:
    potential: PotentialSpec
    value: float  # ||W P_k W||
    c0: float
    rho: float
    start: str
    history: list


def _wpw_top(channels: LevelChannels, k: int, W: np.ndarray, radial: bool):
    """Largest eigenvalue of ``W P_k W`` and a top eigenvector ``g`` of ``P_k W^2 P_k``."""
    grid = channels.grid
    ls, idx, tab = channels.table(k)
    if radial:
        w2 = W.mean(axis=1) ** 2
        diag = TWO_PI * (tab**2 * (grid.radial_weights * w2)).sum(axis=1)
        i = int(np.argmax(diag))
        g = tab[i][:, None] * np.exp(1j * ls[i] * grid.theta)[None, :]
        return float(diag[i]), g
    sw = np.sqrt(grid.weights)

    def mv(x):
        f = x.reshape(grid.shape) / sw
        return (sw * W * channels.project(W * f, k)).ravel()

    op = spla.LinearOperator((grid.size, grid.size), matvec=mv, dtype=complex)
    val, vec = spla.eigsh(op, k=1, which="LA", tol=1e-10, v0=arpack_start(op.shape[0], op.dtype))
    psi = vec[:, 0].reshape(grid.shape) / sw
    g = channels.project(W * psi, k)
    return float(val[0]), g


def _is_radial(W: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.abs(W - W.mean(axis=1, keepdims=True)).max() <= tol * W.max())


def extremal_potential_search(k0: LevelIndex | int, r: Exponent, grid: QuadratureGrid, seed: int = 0,
                              n_random: int = 3, improve_steps: int = 20,
                              channels: LevelChannels | None = None) -> ExtremalResult:
    """Normalised ``W >= 0`` (``||W||_{2r} = 1``) with large ``||W P_k0 W||``.

    From a near-extremal ``f`` of the power iteration, ``W ~ |P f|^{q/(2r)}``
    with ``q = 2r'``; then alternate the top eigenvector of ``W P W`` with the
    Hölder-equality update ``W ~ |psi g|^{1/(2r-1)}``, which never decreases
    the value.  Returns ``V = -W**2`` as an ``extremal`` potential.
    """
    k = k0.k if isinstance(k0, LevelIndex) else int(k0)
    if r == INFINITY or r <= 1:
        raise ValueError("extremal search needs 1 < r < inf")
    q = float(dual_exponent(r))
    r = float(r) if not isinstance(r, (int,)) else r
    two_r = 2.0 * float(r)
    channels = channels or LevelChannels(grid, [k])
    rng = np.random.default_rng(seed)
    # score every start by the Rayleigh quotient <g, W^2 g> / <g, g> (a lower
    # bound for ||W P W|| since g lies in the range of P), improve the winner
    scored = None
    for name, f0 in start_functions(grid, k, n_random, rng).items():
        if name == "orbit":
            continue
        g = power_iterate(channels, k, q, f0).g
        if not np.any(np.abs(g) > 0):
            continue
        W = np.abs(g) ** (q / two_r)
        W /= grid.lp_norm(W, two_r)
        score = float((grid.inner(g, W * W * g) / grid.inner(g, g)).real)
        if scored is None or score > scored[0] * (1 + 1e-6):
            scored = (score, W, name)
    best = None
    if scored is not None:
        _, W, name = scored
        radial = _is_radial(W)
        val, gv = _wpw_top(channels, k, W, radial)
        hist = [val]
        for _ in range(improve_steps):
            Wn = np.abs(W * gv * gv) ** (1.0 / (two_r - 1.0))
            nrm = grid.lp_norm(Wn, two_r)
            if nrm == 0:
                break
            Wn /= nrm
            radial_n = _is_radial(Wn)
            vn, gn = _wpw_top(channels, k, Wn, radial_n)
            if vn <= val * (1 + 1e-9):
                break
            W, val, gv, radial = Wn, vn, gn, radial_n
            hist.append(val)
        best = (val, W, name, hist)
    if best is None:
        raise ClusterError("every start gave a vanishing projection")
    val, W, name, hist = best
    if _is_radial(W):
        W = np.repeat(W.mean(axis=1, keepdims=True), grid.n_theta, axis=1)
    rho = float(rho_exponent(2, q))
    lam = 2 * k + 1
    V = PotentialSpec("extremal", {"k0": k, "q": q}, r, "negative", 1.0, grid, W)
    return ExtremalResult(V, val, val * lam ** (-rho), rho, name, hist)


@dataclass
class SharpnessCertificate:
    k0: int
    r: float
    q: float
    c0: float
    a: float
    mu0: float
    mu: float
    eigenvalue: float
    passed: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def sharpness_certificate(k0: LevelIndex | int, r: Exponent, grid: QuadratureGrid, trunc: BasisTruncation,
                          extremal: ExtremalResult | None = None, amplitude: float = 1.0,
                          window: int = 2, bs_levels_above: int = 20) -> SharpnessCertificate:
    """Witness an eigenvalue of ``H0 + V`` at distance ``>= c0 lambda^rho / 2``
    below ``lambda_k0`` for the extremal ``V``.

    ``a = lambda_k0 - c0 lambda^rho / 2``; the certificate passes when the largest
    eigenvalue ``mu`` of the (truncated, hence lower-bounding) ``Q(a; V)`` is at
    least 1 and the Galerkin spectrum has an eigenvalue in ``[lambda_k0 - 1, a]``.
    """
    k = k0.k if isinstance(k0, LevelIndex) else int(k0)
    q = float(dual_exponent(r))
    lam = 2 * k + 1
    if extremal is None:
        extremal = extremal_potential_search(k, r, grid)
    V = extremal.potential.scaled(amplitude)
    value = amplitude * extremal.value
    c0 = extremal.c0
    rho = float(rho_exponent(2, q))
    if value <= 0:
        return SharpnessCertificate(k, float(r), q, c0, float(lam), 0.0, 0.0, float("nan"), False,
                                    "potential vanishes")
    a = lam - 0.5 * c0 * lam**rho
    mu0 = value / (lam - a)
    mu = top_bs_eigenvalue(a, V, grid, k + bs_levels_above, trunc.m_max)
    rep = cluster_spectrum(k, V, trunc, grid, window=min(window, k))
    below = rep.eigenvalues[(rep.eigenvalues <= a) & (rep.eigenvalues >= lam - 1.0)]
    eig = float(below.min()) if below.size else float("nan")
    passed = mu >= 1.0 and below.size > 0
    reason = "" if passed else ("mu < 1" if mu < 1.0 else "no eigenvalue below a")
    return SharpnessCertificate(k, float(r), q, c0, a, mu0, mu, eig, passed, reason)


# ── scaling fits ──────────────────────────────────────────────────────


@dataclass
class ScalingFit:
    samples: list
    slope: float
    intercept: float
    residual: float
    predicted: float
    half_width: float

    def within(self, tol: float) -> bool:
        return abs(self.slope - self.predicted) <= tol

    def to_dict(self) -> dict:
        return {
            "samples": [[float(a), float(b)] for a, b in self.samples],
            "slope": float(self.slope),
            "intercept": float(self.intercept),
            "residual": float(self.residual),
            "predicted": float(self.predicted),
            "half_width": float(self.half_width),
        }


def loglog_fit(samples: Sequence[tuple[float, float]], predicted: float = float("nan"),
               min_samples: int = 4) -> ScalingFit:
    """Least-squares line through ``(log lambda, log value)``."""
    pts = [(float(a), float(b)) for a, b in samples]
    if len(pts) < min_samples:
        raise DegenerateFitError(f"need at least {min_samples} samples, got {len(pts)}")
    x = np.log([a for a, _ in pts])
    vals = np.array([b for _, b in pts])
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise DegenerateFitError("log-log fit needs strictly positive finite values")
    if np.ptp(x) == 0:
        raise DegenerateFitError("abscissae are constant")
    y = np.log(vals)
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    n = len(pts)
    rms = float(np.sqrt(np.mean(resid**2)))
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
        hw = float(stats.t.ppf(0.975, n - 2) * se)
    else:
        hw = float("inf")
    return ScalingFit(pts, float(slope), float(intercept), rms, float(predicted), hw)


# ── width experiments ─────────────────────────────────────────────────


@dataclass
class WidthExperiment:
    mode: str
    reports: list
    fit: ScalingFit | None
    C: float
    holds: bool
    certificates: list = field(default_factory=list)
    fit_error: str = ""

    @property
    def k_star(self) -> int | None:
        """Smallest swept ``k0`` from which the calibrated bound holds at every larger ``k0``."""
        k = None
        for rep in reversed(self.reports):
            if rep.margin < -1e-12 * max(rep.bound_rhs, 1e-300):
                break
            k = rep.k0
        return k

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "C": float(self.C),
            "holds": bool(self.holds),
            "k_star": self.k_star,
            "fit": self.fit.to_dict() if self.fit is not None else None,
            "fit_error": self.fit_error,
            "reports": [r.to_dict() for r in self.reports],
            "certificates": [c.to_dict() for c in self.certificates],
        }


def extremal_grid(k0: int, window: int = 4, density: float | None = None) -> QuadratureGrid:
    """Grid for the per-level extremal workflow (search, Galerkin, certificate)."""
    lam_top = 2 * (k0 + window) + 1
    extent = 2.0 * math.sqrt(2 * k0 + 1) + 7.0
    if density is None:
        kappa = 4.0 * math.sqrt(2 * k0 + 1) + 2.0 * math.sqrt(lam_top) + 4.0
        density = (kappa * extent / 3.0 + 40.0) / extent
    return build_grid(extent, density, level=k0, m_max=0)


def width_scaling_experiment(k0_list: Sequence[int], mode: str = "upper", V: PotentialSpec | None = None,
                             r: Exponent = 1.5, window: int = 2, seed: int = 0,
                             certify: bool = True, executor=None) -> WidthExperiment:
    """Cluster widths over a sweep of ``k0``.

    ``upper``: fixed ``V``; ``C`` is calibrated at the smallest ``k0`` and the
    bound ``delta <= C ||V||_r lambda^nu(r)`` is checked at the others.
    ``sharp``: per-level extremal ``V`` with ``||V||_r = 1``; the width slope
    is fitted against ``nu(r)`` and each level gets a sharpness certificate.
    """
    ks = sorted(int(k) for k in k0_list)
    reports, certs = [], []
    if mode == "upper":
        if V is None:
            raise ValueError("upper mode needs a potential")
        r = V.r

        def one(k):
            grid = grid_for_potential(V, k + 4 * window)
            trunc = BasisTruncation(k + 4 * window, m_max_for(V, k + 4 * window))
            return converged_cluster_spectrum(k, V, trunc, grid, window)

        mapper = executor.map if executor is not None else map
        reports = list(mapper(one, ks))
    elif mode == "sharp":
        def one(k):
            grid = extremal_grid(k, 2 * window)
            ext = extremal_potential_search(k, r, grid, seed=seed + k)
            trunc = BasisTruncation(k + 2 * window, m_max_for(ext.potential, k + 2 * window))
            rep = converged_cluster_spectrum(k, ext.potential, trunc, grid, window)
            cert = sharpness_certificate(k, r, grid, trunc, ext, window=window) if certify else None
            return rep, cert

        mapper = executor.map if executor is not None else map
        out = list(mapper(one, ks))
        reports = [o[0] for o in out]
        certs = [o[1] for o in out if o[1] is not None]
    else:
        raise ValueError("mode must be 'upper' or 'sharp'")

    nu = float(nu_exponent(2, r))
    base = reports[0]
    denom = base.v_norm * base.lam**nu
    C = base.delta_max / denom if denom > 0 else 0.0
    reports = [rep.with_bound(C) for rep in reports]
    holds = all(rep.margin >= -1e-12 * max(rep.bound_rhs, 1e-300) for rep in reports)
    samples = [(rep.lam, rep.delta_max) for rep in reports if rep.delta_max > 0]
    fit, err = None, ""
    try:
        fit = loglog_fit(samples, nu)
    except DegenerateFitError as exc:
        err = str(exc)
    return WidthExperiment(mode, reports, fit, C, holds, certs, err)
