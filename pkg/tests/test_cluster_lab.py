import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from landau_lab import cluster_lab as cl
from landau_lab.landau_core import (
    INFINITY,
    BasisTruncation,
    LevelChannels,
    build_grid,
    disk_grid,
    eigenfunction_eval,
    radial_function,
)

# ||P_0||_{6/5 -> 6} = ||phi_00||_6^2: the lowest-level L^6/L^2 ratio is maximised by the Gaussian
CARLEN_Q6 = (1 / (2 * math.pi)) * (2 * math.pi / 3) ** (1 / 3)


@pytest.fixture(scope="module")
def gauss():
    return cl.gaussian_potential(0.3, 1.0)


@pytest.fixture(scope="module")
def ggrid():
    return build_grid(12.0, 8.0, level=10)


# ── potentials ────────────────────────────────────────────────────────


def test_potential_validation():
    with pytest.raises(ValueError):
        cl.PotentialSpec("nope")
    with pytest.raises(ValueError):
        cl.PotentialSpec("gaussian", scale=-1.0)
    with pytest.raises(ValueError):
        cl.PotentialSpec("extremal")


def test_lr_norm_closed_form(ggrid):
    # || a e^{-|x|^2/2} ||_r^r = a^r 2 pi / r
    V = cl.gaussian_potential(0.7, 1.0, r=Fraction(3, 2))
    exact = 0.7 * (2 * math.pi / 1.5) ** (1 / 1.5)
    assert abs(V.lr_norm(ggrid) - exact) < 1e-4 * exact


def test_truncation_error_outside_grid():
    V = cl.gaussian_potential(1.0, 3.0)
    with pytest.raises(cl.TruncationError):
        cl.check_potential_on_grid(V, disk_grid(4.0, 10, 16))


# ── projected matrices and cluster spectra ────────────────────────────


def test_projected_matrix_zero(ggrid):
    M = cl.assemble_projected_potential(2, cl.gaussian_potential(0.0), BasisTruncation(2, 6), ggrid)
    assert np.all(M == 0)


def test_projected_matrix_gaussian_closed_form(ggrid):
    for a, w in ((0.3, 1.0), (1.0, 0.5), (2.0, 2.0)):
        V = cl.gaussian_potential(a, w)
        M = cl.assemble_projected_potential(0, V, BasisTruncation(0, 0), build_grid(18.0, 8.0))
        assert abs(M[0, 0] - (-a * w * w / (1 + w * w))) < 1e-10


def test_projected_matrix_radial_is_diagonal(gauss, ggrid):
    M = cl.assemble_projected_potential(3, gauss, BasisTruncation(3, 10), ggrid)
    assert np.abs(M - np.diag(np.diag(M))).max() < 1e-12


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.integers(0, 3))
def test_projected_matrix_hermitian(cx, cy, k0):
    V = cl.PotentialSpec("gaussian", {"width": 1.0, "center": (cx, cy)}, 1.5, "negative", 0.5)
    M = cl.assemble_projected_potential(k0, V, BasisTruncation(3, 8), build_grid(12.0, 6.0, level=3, m_max=8))
    assert np.abs(M - M.conj().T).max() <= 1e-10 * np.abs(M).max()


def test_cluster_free_spectrum(ggrid):
    rep = cl.cluster_spectrum(4, cl.gaussian_potential(0.0), BasisTruncation(6, 8), ggrid, window=2)
    assert set(np.unique(rep.all_eigenvalues)) == {5.0, 7.0, 9.0, 11.0, 13.0}
    assert set(np.unique(rep.eigenvalues)) == {9.0}
    assert rep.delta_max == 0.0


def test_cluster_eigenvalues_inside_strip(gauss, ggrid):
    rep = cl.cluster_spectrum(4, gauss, BasisTruncation(6, cl.m_max_for(gauss, 6)), ggrid, window=2)
    assert np.all(np.abs(rep.eigenvalues - 9.0) <= 1.0 + 1e-12)
    assert np.all(rep.eigenvalues <= 9.0 + 1e-12)
    assert rep.delta_max > 0


def test_first_order_perturbation(ggrid):
    """Cluster shifts agree with c * spec(P V P) up to O(c^2)."""
    base = cl.gaussian_potential(1.0, 1.0)
    trunc = BasisTruncation(6, cl.m_max_for(base, 6))
    first = np.sort(np.linalg.eigvalsh(cl.assemble_projected_potential(2, base, BasisTruncation(2, 8), ggrid)))
    errs = []
    for c in (0.02, 0.01):
        rep = cl.cluster_spectrum(2, base.scaled(c), trunc, ggrid, window=2)
        near = np.sort(rep.eigenvalues[np.abs(rep.eigenvalues - 5.0) < 0.5])[: first.size]
        shifts = near - 5.0
        errs.append(np.abs(shifts - c * first[: shifts.size]).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_converged_window(gauss, ggrid):
    rep = cl.converged_cluster_spectrum(4, gauss, BasisTruncation(8, cl.m_max_for(gauss, 8)), ggrid, 2)
    assert rep.window_change < 0.01


# ── Birman-Schwinger ──────────────────────────────────────────────────


def test_bs_zero_potential(ggrid):
    res = cl.birman_schwinger_norm(4.0, cl.gaussian_potential(0.0), BasisTruncation(4, 8), ggrid)
    assert res.norm == 0.0


def test_bs_at_cluster_eigenvalues(gauss, ggrid):
    trunc = BasisTruncation(8, cl.m_max_for(gauss, 8))
    rep = cl.cluster_spectrum(4, gauss, trunc, ggrid, window=2)
    for E in np.unique(np.round(rep.eigenvalues[cl.distance_to_levels(rep.eigenvalues) > 1e-8], 10)):
        bt = cl.bs_truncation_for(E, gauss, ggrid, trunc.m_max)
        assert cl.birman_schwinger_norm(E, gauss, bt, ggrid).norm >= 0.95


def test_bs_on_spectrum_rejected(gauss, ggrid):
    with pytest.raises(cl.ClusterError):
        cl.birman_schwinger_norm(5.0, gauss, BasisTruncation(4, 8), ggrid)


def test_bs_tail_guard(gauss, ggrid):
    with pytest.raises(cl.TruncationError):
        cl.birman_schwinger_norm(0.5, gauss.scaled(0.01), BasisTruncation(0, 8), ggrid, tail_fraction=1e-3)


def test_bs_decomposition_exact():
    V = cl.PotentialSpec("gaussian", {"width": 1.0, "center": (0.4, -0.2)}, 1.5, "negative", 0.6)
    grid = disk_grid(6.0, 12, 16)
    z = 5.3 + 0.2j
    levels = list(range(5))
    Q = cl.birman_schwinger_operator(z, V, grid, levels, m_max=6)
    Q0 = cl.birman_schwinger_operator(z, V, grid, [2], m_max=6)
    Q1 = cl.birman_schwinger_operator(z, V, grid, [0, 1, 3, 4], m_max=6)
    assert np.linalg.norm(Q - (Q0 + Q1), 2) < 1e-13 * np.linalg.norm(Q, 2)


def test_bs_matrix_free_matches_dense():
    V = cl.PotentialSpec("gaussian", {"width": 1.0, "center": (0.5, 0.0)}, 1.5, "negative", 0.4)
    grid = disk_grid(7.0, 14, 32)
    z = 3.7
    dense = np.linalg.norm(cl.birman_schwinger_operator(z, V, grid, range(9), m_max=12), 2)
    res = cl.birman_schwinger_norm(z, V, BasisTruncation(8, 12), grid, tail_fraction=1.0)
    assert res.norm == pytest.approx(dense, rel=1e-8)


@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_norm_congruence(k, seed):
    """|| |V|^{1/2} P |V|^{1/2} || = || P |V| P || for random nonnegative |V|."""
    grid = disk_grid(6.0, 10, 16)
    rng = np.random.default_rng(seed)
    absv = rng.uniform(0, 1, grid.size)
    w = grid.weights.ravel()
    Phi = np.stack([grid.sample_eigenfunction(k, m).ravel() for m in range(12)], axis=1)
    A = np.sqrt(w)[:, None] * Phi
    D = np.sqrt(absv)[:, None]
    lhs = np.linalg.norm(D * (A @ A.conj().T) * D.T, 2)
    rhs = np.linalg.norm(A.conj().T @ (absv[:, None] * A), 2)
    assert lhs == pytest.approx(rhs, rel=1e-8)


# ── projection norms ──────────────────────────────────────────────────


def test_projection_norm_q2_is_one():
    assert cl.projection_norm_estimate(3, 2, cl.extremal_grid(3, 0)).value == 1.0


def test_projection_norm_rejects_bad_q():
    with pytest.raises(ValueError):
        cl.projection_norm_estimate(0, INFINITY, cl.extremal_grid(0, 0))


def test_projection_norm_k0_q6_exact():
    res = cl.projection_norm_estimate(0, 6, cl.extremal_grid(0, 0))
    assert abs(res.value - CARLEN_Q6) < 0.02 * CARLEN_Q6
    assert res.value <= CARLEN_Q6 * (1 + 1e-6)


def test_projection_norm_k0_q6_dense_oracle():
    """Power iteration with a dense kernel matrix from the eigenfunction sum on a coarse grid."""
    grid = build_grid(7.0, 3.0)
    pts, w = grid.points, grid.weights.ravel()
    Phi = np.stack([eigenfunction_eval(0, m, pts) for m in range(40)], axis=1)
    K = Phi @ Phi.conj().T  # P_0(x_i, x_j)
    q, qp = 6.0, 1.2
    f = np.exp(-0.25 * np.sum(pts**2, axis=1)).astype(complex)
    lq = lambda g, p: np.sum(w * np.abs(g) ** p) ** (1 / p)
    val = 0.0
    for _ in range(300):
        f /= lq(f, qp)
        g = K @ (w * f)
        val = lq(g, q)
        f = np.abs(g) ** (q - 2) * g
    est = cl.projection_norm_estimate(0, 6, cl.extremal_grid(0, 0)).value
    assert abs(est - val) < 0.02 * val
    assert abs(val - CARLEN_Q6) < 0.02 * CARLEN_Q6


@pytest.mark.parametrize("k,q", [(2, 4.0), (5, 6.0), (3, 3.0)])
def test_power_iteration_monotone(k, q):
    grid = cl.extremal_grid(k, 0)
    ch = LevelChannels(grid, [k])
    rng = np.random.default_rng(k)
    for name, f0 in cl.start_functions(grid, k, 2, rng).items():
        h = np.array(cl.power_iterate(ch, k, q, f0, max_steps=60).history)
        assert np.all(np.diff(h) >= -1e-10 * h.max()), name


# ── extremal potentials and certificates ──────────────────────────────


def test_extremal_rejects_infinite_r():
    with pytest.raises(ValueError):
        cl.extremal_potential_search(0, INFINITY, cl.extremal_grid(0, 0))


def test_extremal_normalised_and_nonpositive():
    grid = cl.extremal_grid(3, 2)
    ext = cl.extremal_potential_search(3, Fraction(3, 2), grid)
    W = ext.potential.table
    assert abs(grid.lp_norm(W, 3.0) - 1.0) < 1e-4
    assert ext.potential.lr_norm(grid) == pytest.approx(1.0, abs=1e-4)
    assert np.all(ext.potential.values(grid) <= 0)


def _radial_wpw(grid, W_r, k=0, m_range=range(8)):
    vals = [2 * math.pi * np.sum(grid.radial_weights * W_r**2 * radial_function(k, m, grid.radii) ** 2)
            for m in m_range]
    return max(vals)


def test_extremal_beats_simplex_brute_force():
    """k0 = 0, r = 3/2: search value >= the best 100-annulus simplex potential."""
    r = 1.5
    grid = cl.extremal_grid(0, 2)
    ext = cl.extremal_potential_search(0, Fraction(3, 2), grid)
    edges = np.linspace(0.0, 6.0, 101)
    areas = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    # int over each annulus of |phi_{0,m}|^2 = P(a <= r^2/2 chi^2_{2m+2}) in closed form via gammainc
    from scipy.special import gammainc

    best = 0.0
    for m in range(4):
        mass = np.diff(gammainc(m + 1, edges**2 / 2))
        # maximise sum_i (p_i/A_i)^{1/r} mass_i over the simplex
        obj = lambda p: -np.sum((np.clip(p, 0, None) / areas) ** (1 / r) * mass)
        p0 = np.full(100, 0.01)
        res = minimize(obj, p0, method="SLSQP", bounds=[(0, 1)] * 100,
                       constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0}], options={"maxiter": 500})
        best = max(best, -res.fun)
    assert ext.value >= best * (1 - 1e-6)
    assert ext.value <= CARLEN_Q6 * (1 + 1e-4)


@given(st.integers(0, 2**31 - 1))
def test_cauchy_schwarz_wpw(seed):
    grid = disk_grid(6.0, 10, 16)
    rng = np.random.default_rng(seed)
    w = grid.weights.ravel()
    Phi = np.stack([grid.sample_eigenfunction(1, m).ravel() for m in range(12)], axis=1)
    S = (np.sqrt(w)[:, None] * Phi) @ (np.sqrt(w)[:, None] * Phi).conj().T
    W1, W2 = rng.uniform(0, 1, (2, grid.size))
    n12 = np.linalg.norm(W1[:, None] * S * W2[None, :], 2)
    n11 = np.linalg.norm(W1[:, None] * S * W1[None, :], 2)
    n22 = np.linalg.norm(W2[:, None] * S * W2[None, :], 2)
    assert n12 <= math.sqrt(n11 * n22) * (1 + 1e-6)
    assert n12 <= max(n11, n22) * (1 + 1e-6)


@pytest.fixture(scope="module")
def cert10():
    k = 10
    grid = cl.extremal_grid(k, 4)
    ext = cl.extremal_potential_search(k, Fraction(3, 2), grid, seed=k)
    trunc = BasisTruncation(k + 4, cl.m_max_for(ext.potential, k + 4))
    return grid, ext, trunc


def test_certificate_passes_k10(cert10):
    grid, ext, trunc = cert10
    cert = cl.sharpness_certificate(10, Fraction(3, 2), grid, trunc, ext)
    assert cert.passed and cert.mu >= 1.0
    rep = cl.cluster_spectrum(10, ext.potential, trunc, grid, 2)
    assert np.any(np.isclose(rep.eigenvalues, cert.eigenvalue, atol=1e-12))


def test_certificate_fails_for_zero_potential(cert10):
    grid, ext, trunc = cert10
    cert = cl.sharpness_certificate(10, Fraction(3, 2), grid, trunc, ext, amplitude=0.0)
    assert not cert.passed


def test_amplitude_doubling_moves_eigenvalue_down(cert10):
    grid, ext, trunc = cert10
    low = []
    for amp in (1.0, 2.0):
        rep = cl.cluster_spectrum(10, ext.potential.scaled(amp), trunc, grid, 2)
        low.append(rep.eigenvalues[rep.eigenvalues > 19.5].min())
    assert low[1] < low[0] < 21.0


# ── fits and experiments ──────────────────────────────────────────────


def test_fit_exact_power_law():
    lam = np.array([17, 25, 33, 49, 65, 81], dtype=float)
    fit = cl.loglog_fit(list(zip(lam, 2.0 * lam ** (-1 / 3))), -1 / 3)
    assert abs(fit.slope + 1 / 3) < 1e-12
    assert fit.within(1e-10)


def test_fit_noisy_power_law():
    lam = 2.0 * np.arange(4, 41, 4) + 1.0
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        vals = lam ** (-1 / 3) * (1 + 0.05 * rng.uniform(-1, 1, lam.size))
        worst = max(worst, abs(cl.loglog_fit(list(zip(lam, vals))).slope + 1 / 3))
    assert worst < 0.05


@pytest.mark.parametrize("samples", [[(9.0, 1.0)], [(9.0, 1.0)] * 5, [(9.0, 0.0), (17, 1), (25, 1), (33, 1)]])
def test_fit_degenerate(samples):
    with pytest.raises(cl.DegenerateFitError):
        cl.loglog_fit(samples)


def test_width_experiment_zero_potential():
    exp = cl.width_scaling_experiment([2, 4, 6, 8], "upper", cl.gaussian_potential(0.0), window=2)
    assert all(rep.delta_max == 0 for rep in exp.reports)
    assert exp.fit is None and "samples" in exp.fit_error


def test_width_experiment_upper_stable_under_k_max_doubling(gauss):
    """C calibrated at the smallest k0 barely moves when the Galerkin window (and k_max) doubles."""
    ks = [8, 12, 16, 24]
    a = cl.width_scaling_experiment(ks, "upper", gauss, window=2)
    b = cl.width_scaling_experiment(ks, "upper", gauss, window=4)
    assert a.holds and b.holds
    assert math.isfinite(a.C) and abs(a.C - b.C) <= 0.1 * a.C


def test_k_star_reports_onset():
    reps = [cl.ClusterReport(k, np.zeros(0), 0.0, bound_rhs=1.0, margin=m) for k, m in ((4, -0.1), (8, 0.2), (12, 0.0))]
    exp = cl.WidthExperiment("upper", reps, None, 1.0, False)
    assert exp.k_star == 8
    assert replace(exp, reports=reps[:1]).k_star is None
