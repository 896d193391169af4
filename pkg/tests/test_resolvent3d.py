import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from landau_lab import cluster_lab as cl
from landau_lab import resolvent3d as r3
from landau_lab.landau_core import disk_grid


# ── Green function ────────────────────────────────────────────────────


@pytest.mark.parametrize("t", [-2.0, -0.3, 0.0, 0.7, 5.0])
def test_kernel_negative_energy(t):
    val = r3.halfline_resolvent_kernel(-1.0, t)
    assert abs(abs(val) - math.exp(-abs(t)) / 2) < 1e-15
    # the true Green function of -d^2 + 1 is positive; the exp/(2i sqrt) form is its negative
    assert val == pytest.approx(math.exp(-abs(t)) / 2, abs=1e-15)
    s = r3.upper_sqrt(-1.0)
    assert val == pytest.approx(-np.exp(1j * s * abs(t)) / (2j * s), abs=1e-15)


def test_kernel_near_positive_axis():
    for eps in (1e-2, 1e-4, 1e-6):
        val = r3.halfline_resolvent_kernel(1 + 1j * eps, 0.0)
        assert abs(abs(val) - 0.5) < eps
    assert r3.halfline_resolvent_kernel(1 + 1e-8j, 0.0) == pytest.approx(0.5j, abs=1e-8)


def test_kernel_branch_cut_rejected():
    with pytest.raises(ValueError):
        r3.halfline_resolvent_kernel(2.0, 1.0)


@given(st.floats(-4, 4), st.floats(0.05, 3))
def test_upper_sqrt_in_upper_half_plane(re, im):
    for mu in (complex(re, im), complex(re, -im)):
        s = r3.upper_sqrt(mu)
        assert s.imag > 0
        assert abs(s * s - mu) < 1e-12 * max(1, abs(mu))


def test_kernel_inverts_second_difference():
    """(-D^2 - mu) G = delta on the lattice, with O(h^2) defect."""
    mu = -0.8 + 0.6j
    errs = []
    for h in (0.02, 0.01):
        t = h * np.arange(-400, 401)
        G = r3.halfline_resolvent_kernel(mu, t)
        lhs = -(G[2:] - 2 * G[1:-1] + G[:-2]) / h**2 - mu * G[1:-1]
        delta = np.zeros_like(lhs)
        delta[lhs.size // 2] = 1.0 / h
        off = np.abs(lhs - delta)
        off[lhs.size // 2] = 0.0
        errs.append(off.max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


# ── layered resolvent ─────────────────────────────────────────────────


def _test_function(ax):
    v1 = np.exp(-0.5 * ax.z**2)
    v2 = np.exp(-((ax.z - 0.5) ** 2)) * np.cos(ax.z)
    return r3.LayeredFunction.separable([(0, 0, 1.0, v1), (2, 3, 0.5, v2)], ax)


def test_single_channel_is_1d_convolution():
    ax = r3.AxialGrid.symmetric(6.0, 0.05)
    v = np.exp(-ax.z**2) * (1 + ax.z)
    f = r3.LayeredFunction.separable([(2, 1, 1.0, v)], ax, k_max=3, m_max=3)
    z = 5.3 + 0.4j
    u = r3.layered_resolvent_apply(z, f)
    mu = z - r3.level_energy(2)
    ref = r3.axial_convolve_direct(v, lambda t: r3.halfline_resolvent_kernel(mu, t), ax)
    assert np.abs(u.coeffs[2, 1] - ref).max() < 1e-10 * np.abs(ref).max()
    mask = np.ones(u.coeffs.shape[:2], bool)
    mask[2, 1] = False
    assert np.all(u.coeffs[mask] == 0)


def test_roundtrip_second_order():
    z = 4.1 + 0.3j
    res = [r3.resolvent_roundtrip_residual(z, _test_function(r3.AxialGrid.symmetric(6.0, h))) for h in (0.04, 0.02)]
    assert res[1] < 1e-3
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.1)


def test_conjugate_symmetry():
    f = _test_function(r3.AxialGrid.symmetric(5.0, 0.05))
    z = 6.2 + 0.5j
    a = r3.layered_resolvent_apply(np.conj(z), f).coeffs
    b = np.conj(r3.layered_resolvent_apply(z, f.conj()).coeffs)
    assert np.abs(a - b).max() < 1e-14


@pytest.mark.parametrize("z", [4.0 + 0j, 4.0 + 2j])
def test_resolvent_rejects_bad_z(z):
    with pytest.raises(ValueError):
        r3.layered_resolvent_apply(z, _test_function(r3.AxialGrid.symmetric(2.0, 0.1)))


def test_from_grid_tail_certificate():
    grid = disk_grid(11.0, 56, 64)
    ax = r3.AxialGrid.symmetric(2.0, 0.1)
    f = _test_function(ax)
    vals = f.to_grid(grid)
    back = r3.LayeredFunction.from_grid(vals, grid, ax, 2, 3)
    assert np.abs(back.coeffs - f.coeffs).max() < 1e-8
    with pytest.raises(r3.TailCertificateError):
        r3.LayeredFunction.from_grid(vals, grid, ax, 1, 3)


# ── level sum ─────────────────────────────────────────────────────────


def test_kernel_sum_k_max_doubling():
    z = 21.0 + 0.5 + 0.5j
    base = r3.kernel_sum_lhs(1.0, z, 4)
    assert base.k_max >= 21
    big = r3.kernel_sum_lhs(1.0, z, 4, K_max=2 * base.k_max + 50)
    assert abs(big.value - base.value) < 1e-8
    assert math.isfinite(base.value)


def test_kernel_sum_tail_guard():
    with pytest.raises(r3.TailCertificateError):
        r3.kernel_sum_lhs(0.01, 11 + 0.5j, 4, K_max=5)
    with pytest.raises(ValueError):
        r3.kernel_sum_lhs(0.0, 11 + 0.5j, 4)


@given(st.floats(0.02, 5.0), st.floats(1.01, 3.0), st.sampled_from([3.0, 4.0, 5.0]),
       st.integers(2, 30), st.floats(0.1, 1.0))
def test_kernel_sum_monotone_in_t(t, factor, q, k0, delta):
    z = r3.cluster_point(k0, delta)
    K = r3.kernel_sum_k_max(t, z)
    a = r3.kernel_sum_lhs(t, z, q, K_max=K).value
    b = r3.kernel_sum_lhs(t * factor, z, q, K_max=K).value
    assert b <= a * (1 + 1e-12)


def test_kernel_sum_large_t_local():
    """At large |t| the levels above Re z are exponentially suppressed."""
    k0, z, q = 10, r3.cluster_point(10, 0.5), 4
    rho = float(r3.rho_exponent(3, q))
    t = 10.0
    full = r3.kernel_sum_lhs(t, z, q).value
    low = 0.0
    for k in range(k0 + 2):
        w = z - r3.level_energy(k)
        low += r3.level_energy(k) ** rho * math.exp(-t * r3.upper_sqrt(w).imag) / math.sqrt(abs(w))
    assert full == pytest.approx(low, rel=1e-3)
    above = full - low
    assert 0 <= above < 1e-3 * full


def test_kernel_sum_check_small_lattice():
    lat = r3.SumLattice(qs=(4.0,), k0s=(5, 10), t_min=0.1, t_max=5.0, n_t=4, deltas=(0.5,))
    res = r3.kernel_sum_check(lat)
    assert len(res.rows) == 8
    assert res.max_ratio == max(r["ratio"] for r in res.rows)
    assert res.max_ratio < 10


# ── mixed norms and HLS ───────────────────────────────────────────────


def test_mixed_norm_spec_validation():
    with pytest.raises(ValueError):
        r3.MixedNormSpec("Xq", 6.0)
    with pytest.raises(ValueError):
        r3.MixedNormSpec("Yq", 4.0)
    spec = r3.MixedNormSpec("Xq", 4.0)
    assert spec.rho == -0.25 and spec.axial_exponents == (4.0 / 3.0, 1.0)
    p = min(spec.axial_exponents + r3.MixedNormSpec("Vq", 4.0).axial_exponents)
    assert p >= 1


def test_mixed_norm_dual_space_not_normed():
    with pytest.raises(ValueError):
        r3.mixed_norm(np.zeros((2, 2, 2)), r3.MixedNormSpec("Xq_star", 4.0))


def test_mixed_norm_zero():
    grid = disk_grid(6.0, 20, 32)
    ax = r3.AxialGrid.symmetric(2.0, 0.1)
    assert r3.mixed_norm(r3.LayeredFunction.zeros(1, 1, ax), r3.MixedNormSpec("Xq", 4.0), grid) == 0.0


def test_mixed_norm_gaussian_closed_form():
    grid = disk_grid(12.0, 80, 64)
    ax = r3.AxialGrid.symmetric(10.0, 0.01)
    f = r3.LayeredFunction.separable([(0, 0, 1.0, np.exp(-0.5 * ax.z**2))], ax)
    # planar L^{4/3} of phi_00 and axial L^{4/3}, L^1 of exp(-z^2/2)
    planar = (2 * math.pi) ** -0.5 * (3 * math.pi) ** 0.75
    axial = max(math.sqrt(1.5 * math.pi) ** 0.75, math.sqrt(2 * math.pi))
    val = r3.mixed_norm(f, r3.MixedNormSpec("Xq", 4.0), grid)
    assert val == pytest.approx(planar * axial, rel=1e-4)


@given(st.integers(0, 2**31 - 1))
def test_mixed_norm_separable(seed):
    rng = np.random.default_rng(seed)
    grid = disk_grid(8.0, 30, 32)
    ax = r3.AxialGrid.symmetric(3.0, 0.05)
    v = np.exp(-ax.z**2) * (1 + rng.uniform(0, 1) * np.sin(3 * ax.z))
    amp = rng.normal(size=2)
    f = r3.LayeredFunction.separable([(0, 0, amp[0], v), (1, 2, amp[1], v)], ax)
    spec = r3.MixedNormSpec("Xq", 3.5)
    u = r3.LayeredFunction.separable([(0, 0, amp[0], np.ones(1)), (1, 2, amp[1], np.ones(1))],
                                     r3.AxialGrid(0.0, 1.0, 1)).to_grid(grid)[:, :, 0]
    planar = grid.lp_norm(u, spec.planar_exponent)
    expected = planar * max(ax.lp_norm(v, p) for p in spec.axial_exponents)
    assert r3.mixed_norm(f, spec, grid) == pytest.approx(expected, rel=1e-10)


@given(st.integers(0, 2**31 - 1), st.sampled_from([3.0, 4.0, 5.0]))
def test_hls_bounded(seed, q):
    rng = np.random.default_rng(seed)
    rho = float(r3.rho_exponent(3, q))
    a = rng.uniform(0, 1, 60) * (rng.uniform(size=60) < 0.5)
    b = rng.uniform(0, 1, 60)
    if not a.any():
        a[0] = 1.0
    assert 0 < r3.hls_ratio(a, b, 0.1, rho) < 10.0


def test_hls_cell_matrix_symmetric_positive():
    A = r3.hls_cell_matrix(30, 0.1, 0.5)
    assert np.allclose(A, A.T)
    assert np.all(A > 0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.floats(0.01, 1.0))
def test_l1_pairing_identity(vals, h):
    a = np.array(vals)
    b = np.cos(np.arange(a.size))
    lhs, rhs = r3.l1_pairing_identity(a, b, h)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


# ── LAP scan ──────────────────────────────────────────────────────────


@pytest.fixture(scope="module")
def lap_setup():
    ax = r3.AxialGrid.symmetric(7.0, 0.05)
    v1 = np.exp(-0.5 * ax.z**2)
    v2 = np.exp(-((ax.z - 0.5) ** 2))
    f = r3.LayeredFunction.separable([(0, 0, 1.0, v1), (1, 1, 0.5, v2)], ax)
    g = r3.LayeredFunction.separable([(0, 0, 1.0, v2), (1, 1, 1.0, v1)], ax)
    return f, g, disk_grid(7.0, 48, 128)


def test_lap_orthogonal_channels_vanish(lap_setup):
    f, _, grid = lap_setup
    ax = f.axial
    g = r3.LayeredFunction.separable([(2, 3, 1.0, np.exp(-ax.z**2))], ax)
    scan = r3.lap_bilinear_scan([4.0], [1e-1, 1e-3], f, g, None, 4.0, grid)
    assert all(r.value == 0.0 for r in scan.rows)


def test_lap_free_stabilises(lap_setup):
    f, g, grid = lap_setup
    scan = r3.lap_bilinear_scan([3.6, 4.0, 4.4], [1e-1, 1e-2, 1e-3, 1e-4], f, g, None, 4.0, grid)
    assert scan.stabilization() < 0.05


def test_lap_rejects_threshold():
    with pytest.raises(ValueError):
        r3.check_mid_gap([3.02])


def test_lap_smallness_gate():
    ax = r3.AxialGrid.symmetric(4.0, 0.1)
    f = r3.LayeredFunction.separable([(0, 0, 1.0, np.exp(-ax.z**2))], ax)
    grid = disk_grid(7.0, 20, 32)
    V = r3.LayeredPotential(cl.gaussian_potential(20.0, 1.0), 1.0)
    with pytest.raises(r3.SmallnessGateError):
        r3.lap_bilinear_scan([4.0], [0.1], f, f, V, 4.0, grid, k_max_v=6, m_max_v=8)


def test_bs_operator_adjoint():
    ax = r3.AxialGrid.symmetric(3.0, 0.1)
    grid = disk_grid(6.0, 14, 32)
    V = r3.LayeredPotential(cl.PotentialSpec("gaussian", {"width": 1.0}, 1.5, "signed", 0.5), 1.0)
    op = r3.BSOperator(4.0 + 0.2j, grid, ax, V.values(grid, ax), 5, 10).linear_operator()
    rng = np.random.default_rng(0)
    x = rng.normal(size=op.shape[1]) + 1j * rng.normal(size=op.shape[1])
    y = rng.normal(size=op.shape[0]) + 1j * rng.normal(size=op.shape[0])
    assert np.vdot(y, op.matvec(x)) == pytest.approx(np.vdot(op.rmatvec(y), x), rel=1e-10)
