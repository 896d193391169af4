"""Brute-force references: a finite-difference magnetic Hamiltonian on a
Cartesian box and eigenfunction-sum projection kernels.

Nothing here uses the Laguerre closed forms for the kernel or the level
structure, so these routines can check the channel machinery independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .landau_core import arpack_start, eigenfunction_eval

DENSE_LIMIT = 2_500


class BoundaryLeakError(RuntimeError):
    """An eigenfunction carries too much mass on the boundary ring."""


@dataclass(frozen=True)
class FDProblem:
    """Dirichlet box ``[-half_width, half_width]**2`` with step ``h``.

    Unknowns sit on the interior nodes; the magnetic field enters through
    Peierls phases on the centred five-point stencil, so the matrix is
    Hermitian exactly and gauge-covariant.
    """

    half_width: float
    h: float

    def __post_init__(self):
        if self.half_width <= 0 or self.h <= 0 or self.h >= self.half_width:
            raise ValueError("need 0 < h < half_width")

    @property
    def n(self) -> int:
        return int(round(2 * self.half_width / self.h)) - 1

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(1, self.n + 1)

    def mesh(self):
        a = self.axis
        return np.meshgrid(a, a, indexing="ij")


def fd_hamiltonian(problem: FDProblem, V=None) -> sp.csr_matrix:
    """Sparse matrix of ``(-i d/dx + y/2)^2 + (-i d/dy - x/2)^2 + V``."""
    n, h = problem.n, problem.h
    x, y = problem.mesh()
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    diag = np.full(n * n, 4.0 / h**2, dtype=complex)
    if V is not None:
        diag += np.asarray(V, dtype=float).reshape(n * n)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag)
    # x-hops: link phase exp(-i A_x h) with A_x = -y/2
    src, dst = idx[:-1, :].ravel(), idx[1:, :].ravel()
    ph = np.exp(0.5j * h * y[:-1, :].ravel())
    rows += [src, dst]
    cols += [dst, src]
    vals += [-ph / h**2, -np.conj(ph) / h**2]
    # y-hops: A_y = x/2
    src, dst = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    ph = np.exp(-0.5j * h * x[:, :-1].ravel())
    rows += [src, dst]
    cols += [dst, src]
    vals += [-ph / h**2, -np.conj(ph) / h**2]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n)
    )


def apply_fd(problem: FDProblem, psi: np.ndarray) -> np.ndarray:
    """Apply the discrete free Hamiltonian to a function sampled on the mesh."""
    H = fd_hamiltonian(problem)
    return (H @ psi.reshape(-1)).reshape(psi.shape)


@dataclass
class FDSpectrum:
    eigenvalues: np.ndarray
    boundary_mass: np.ndarray
    leak_tol: float = 1e-4

    @property
    def bulk(self) -> np.ndarray:
        return self.boundary_mass <= self.leak_tol

    @property
    def bulk_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.bulk]


def _boundary_ring(problem: FDProblem, width: float = 1.0) -> np.ndarray:
    x, y = problem.mesh()
    edge = problem.half_width - width
    return ((np.abs(x) > edge) | (np.abs(y) > edge)).ravel()


def _solve(H, count, sigma):
    N = H.shape[0]
    if N <= DENSE_LIMIT:
        w, v = eigh(H.toarray())
        if sigma is None:
            sel = np.arange(min(count, N))
        else:
            sel = np.sort(np.argsort(np.abs(w - sigma))[:count])
        return w[sel], v[:, sel]
    if sigma is None:
        sigma = float(H.diagonal().real.min()) - 1.0 if count > N else 0.0
    # Landau levels are highly degenerate; a wide Krylov space keeps ARPACK fast
    ncv = min(N - 1, max(2 * count + 1, 40))
    w, v = spla.eigsh(H.tocsc(), k=count, sigma=sigma, which="LM", ncv=ncv, v0=arpack_start(N, H.dtype))
    order = np.argsort(w)
    return w[order], v[:, order]


def fd_spectrum(problem: FDProblem, V=None, count: int = 10, sigma: float | None = None,
                strict: bool = False, leak_tol: float = 1e-4) -> FDSpectrum:
    """Eigenvalues of the discretised ``H0 + V``.

    With ``sigma=None`` the lowest ``count`` eigenvalues are returned
    (shift-invert about 0, which lies below the spectrum); otherwise the
    ``count`` eigenvalues closest to ``sigma``.  Each eigenvalue carries the
    mass its eigenvector puts on a unit-width boundary ring; Dirichlet edge
    states have large values there.  ``strict`` raises on any leak.
    """
    H = fd_hamiltonian(problem, V)
    w, v = _solve(H, count, sigma)
    ring = _boundary_ring(problem)
    mass = np.sum(np.abs(v[ring]) ** 2, axis=0) / np.sum(np.abs(v) ** 2, axis=0)
    out = FDSpectrum(w.real, mass, leak_tol)
    if strict and not out.bulk.all():
        worst = float(mass.max())
        raise BoundaryLeakError(f"boundary mass {worst:.2e} exceeds {leak_tol:.0e}; enlarge the box")
    return out


def level_clusters(eigenvalues, levels, rel_tol: float = 0.01) -> dict:
    """Eigenvalues within ``rel_tol`` (relative) of ``2k + 1`` for each ``k``."""
    ev = np.asarray(eigenvalues)
    return {k: ev[np.abs(ev - (2 * k + 1)) <= rel_tol * (2 * k + 1)] for k in levels}


def richardson(coarse: float, fine: float, ratio: float = 2.0, order: int = 2) -> float:
    """Extrapolate two second-order estimates at steps ``h`` and ``h/ratio``."""
    f = ratio**order
    return (f * fine - coarse) / (f - 1.0)


def kernel_by_sum(k: int, x, y, M: int = 200) -> complex:
    """``sum_{m <= M} phi_{k,m}(x) conj(phi_{k,m}(y))``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    total = 0.0
    for m in range(M + 1):
        total = total + eigenfunction_eval(k, m, x) * np.conj(eigenfunction_eval(k, m, y))
    return total


def dense_projection_matrix(k: int, points: np.ndarray, weights: np.ndarray, M: int = 200) -> np.ndarray:
    """Symmetrised projection matrix ``sqrt(w_i) P_k(x_i, x_j) sqrt(w_j)`` from the
    truncated eigenfunction sum (no kernel closed form)."""
    Phi = np.stack([eigenfunction_eval(k, m, points) for m in range(M + 1)], axis=1)
    A = np.sqrt(weights)[:, None] * Phi
    return A @ A.conj().T


__all__ = [
    "BoundaryLeakError",
    "FDProblem",
    "FDSpectrum",
    "apply_fd",
    "dense_projection_matrix",
    "fd_hamiltonian",
    "fd_spectrum",
    "kernel_by_sum",
    "level_clusters",
    "richardson",
]
