import math

import numpy as np
import pytest

from p1lab.bergman import (
    _log_kernel_values,
    bergman_basis,
    bergman_kernel,
    gram_matrix,
    kernel_log_at_centers,
    kernel_vs_envelope,
    min_theta_nodes,
    orthonormal_basis,
    rate_fit,
    scaled_gram_cond,
)
from p1lab.envelope import WeightField, cylinder_measure, envelope_from_radial, parse_weight
from p1lab.errors import (
    ConditioningError,
    ConfigurationError,
    InvalidFieldError,
    UsageError,
)
from p1lab.geometry import Chart, build_grid, log_radius


def fs_gram_diag(p):
    return np.array([
        math.factorial(j) * math.factorial(p - j) / math.factorial(p + 1)
        for j in range(p + 1)
    ])


def test_min_theta_nodes_enforced(fs_weight):
    assert min_theta_nodes(10) == 48
    g = build_grid(64, 40)
    with pytest.raises(ConfigurationError):
        gram_matrix(10, fs_weight, g)


@pytest.mark.parametrize("p", [6, 13])
def test_fs_gram_closed_form(p, fs_weight):
    g = build_grid(128, min_theta_nodes(p))
    G = gram_matrix(p, fs_weight, g)
    diag = np.real(np.diag(G))
    ref = fs_gram_diag(p)
    assert np.max(np.abs(diag - ref) / ref) < 1e-13
    off = G - np.diag(np.diag(G))
    scale = np.sqrt(np.outer(diag, diag))
    assert np.max(np.abs(off) / scale) < 1e-10


@pytest.mark.parametrize("descriptor", ["fs", "cap{1}", "bump{0,1,0.3}"])
def test_orthonormalization_inverts_the_gram(descriptor, grid128):
    w = parse_weight(descriptor)
    p = 15
    G = gram_matrix(p, w, grid128)
    basis = orthonormal_basis(G, weight_hash=w.content_hash())
    eye = basis.coeffs @ G @ basis.coeffs.conj().T
    assert np.max(np.abs(eye - np.eye(p + 1))) < 1e-12
    # lower triangular with positive diagonal (uniqueness of Cholesky)
    assert np.max(np.abs(np.triu(basis.coeffs, 1))) == 0.0
    assert np.all(np.real(np.diag(basis.coeffs)) > 0)


def test_orthonormal_basis_on_random_hermitian_pd(rng):
    B = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    A = B @ B.conj().T + 0.1 * np.eye(5)
    basis = orthonormal_basis(A)
    eye = basis.coeffs @ A @ basis.coeffs.conj().T
    assert np.max(np.abs(eye - np.eye(5))) < 1e-12


def test_fs_coefficients_closed_form(fs_weight):
    p = 10
    g = build_grid(128, min_theta_nodes(p))
    basis = bergman_basis(p, fs_weight, g)
    ref = np.sqrt((p + 1) * np.array([math.comb(p, j) for j in range(p + 1)]))
    diag = np.real(np.diag(basis.coeffs))
    assert np.max(np.abs(diag - ref) / ref) < 1e-12


def test_scaled_gram_cond_is_one_for_radial(fs_weight, cap_weight, grid128):
    for w in (fs_weight, cap_weight):
        G = gram_matrix(12, w, grid128)
        assert scaled_gram_cond(G) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ConditioningError):
        scaled_gram_cond(np.array([[1.0, 0.0], [0.0, -2.0]]))


@pytest.mark.parametrize("p", [5, 20])
def test_fs_kernel_is_constant(p, fs_weight):
    g = build_grid(128, min_theta_nodes(p))
    basis = bergman_basis(p, fs_weight, g)
    kf = bergman_kernel(basis, fs_weight, g)
    assert np.max(np.abs(kf.values - (p + 1)) / (p + 1)) < 1e-6


def test_fs_kernel_l1_closed_form(fs_weight):
    p = 24
    g = build_grid(128, min_theta_nodes(p))
    basis = bergman_basis(p, fs_weight, g)
    kf = bergman_kernel(basis, fs_weight, g)
    env = envelope_from_radial(fs_weight, g)
    assert kernel_vs_envelope(kf, env, g) == pytest.approx(
        math.log(p + 1) / (2 * p), abs=1e-9)


def test_degree_zero_kernel(fs_weight, grid128):
    basis = bergman_basis(0, fs_weight, grid128)
    kf = bergman_kernel(basis, fs_weight, grid128)
    assert np.max(np.abs(kf.values - 1.0)) < 1e-12
    assert np.max(np.abs(kf.log_half_p)) == 0.0


def test_kernel_lineage_checks(fs_weight, cap_weight, grid128):
    basis = bergman_basis(8, fs_weight, grid128)
    with pytest.raises(UsageError):
        bergman_kernel(basis, cap_weight, grid128)
    kf = bergman_kernel(basis, fs_weight, grid128)
    env = envelope_from_radial(cap_weight, grid128)
    with pytest.raises(UsageError):
        kernel_vs_envelope(kf, env, grid128)


def test_variational_characterization(cap_weight, grid128, rng):
    # P_p(z) = sup |f(z)|^2 e^{-2p psi} over unit-norm sections
    p = 8
    basis = bergman_basis(p, cap_weight, grid128)
    sel = grid128.chart == Chart.ZERO
    z = grid128.coords[sel][::37]
    mono = z[:, None] ** np.arange(p + 1)[None, :]
    svals = mono @ basis.coeffs.T          # orthonormal sections at z
    weight = np.exp(-2 * p * cap_weight.psi_local(
        np.full(z.shape, Chart.ZERO, dtype=np.int8), z))
    P = np.sum(np.abs(svals) ** 2, axis=1) * weight
    for _ in range(20):
        c = rng.standard_normal(p + 1) + 1j * rng.standard_normal(p + 1)
        c /= np.linalg.norm(c)
        f = np.abs(svals @ c) ** 2 * weight
        assert np.all(f <= P * (1 + 1e-12))
    # the kernel section at z0 attains the sup
    k0 = svals[3].conj() / np.linalg.norm(svals[3])
    attained = abs(svals[3] @ k0) ** 2 * weight[3]
    assert attained == pytest.approx(P[3], rel=1e-12)


def _plus_bump(w, bump_descriptor):
    bump = parse_weight(bump_descriptor)
    phi_t = lambda t: w.phi_t(t) + bump.phi_t(t)
    return WeightField(
        descriptor=f"{w.descriptor}+{bump_descriptor}",
        is_radial=True,
        phi_node=lambda ch, co: phi_t(log_radius(ch, co)),
        phi_t=phi_t,
    )


def test_unweighted_kernel_monotone_in_the_weight(cap_weight, grid128):
    # raising psi pointwise shrinks every L2 norm, which can only raise
    # the unweighted diagonal kernel e^{2 p psi} P_p
    p = 10
    hi_w = _plus_bump(cap_weight, "bump{0,0.5,0.5}")
    lo = bergman_basis(p, cap_weight, grid128)
    hi = bergman_basis(p, hi_w, grid128)
    log_q_lo = _log_kernel_values(lo, cap_weight, grid128.chart, grid128.coords) \
        + 2 * p * cap_weight.psi_local(grid128.chart, grid128.coords)
    log_q_hi = _log_kernel_values(hi, hi_w, grid128.chart, grid128.coords) \
        + 2 * p * hi_w.psi_local(grid128.chart, grid128.coords)
    assert np.min(log_q_hi - log_q_lo) > -1e-10


def test_gauge_shift_leaves_kernel_function_alone(cap_weight, grid128):
    # phi -> phi + c rescales sections by e^{pc} and the weight by e^{-pc};
    # the kernel function and the L1 distance to the envelope are unchanged
    p = 9
    c = 0.37
    shifted = WeightField(
        descriptor="cap-shifted",
        is_radial=True,
        phi_node=lambda ch, co: cap_weight.phi_node(ch, co) + c,
        phi_t=lambda t: cap_weight.phi_t(t) + c,
    )
    kf = bergman_kernel(bergman_basis(p, cap_weight, grid128), cap_weight, grid128)
    kf_shift = bergman_kernel(bergman_basis(p, shifted, grid128), shifted, grid128)
    assert np.max(np.abs(kf.log_half_p - kf_shift.log_half_p)) < 1e-9
    l1 = kernel_vs_envelope(kf, envelope_from_radial(cap_weight, grid128), grid128)
    l1_shift = kernel_vs_envelope(kf_shift, envelope_from_radial(shifted, grid128), grid128)
    assert l1 == pytest.approx(l1_shift, abs=1e-9)


def test_expected_current_potential_is_positive(cap_weight, grid128):
    # V = psi + log P_p / (2p) is the potential of the expected zero
    # current; its cylinder Laplacian masses must be >= 0 up to rounding
    p = 20
    basis = bergman_basis(p, cap_weight, grid128)
    t = np.linspace(-9, 9, 194)[1:-1]
    th = 2 * np.pi * np.arange(96) / 96
    tt, thth = np.meshgrid(t, th, indexing="ij")
    on0 = tt <= 0
    chart = np.where(on0, Chart.ZERO.value, Chart.INFINITY.value).astype(np.int8)
    coords = np.where(on0, np.exp(tt + 1j * thth), np.exp(-tt - 1j * thth))
    log_p = _log_kernel_values(basis, cap_weight, chart.ravel(),
                               coords.ravel()).reshape(tt.shape)
    v = cap_weight.psi_of_cyl(tt, thth) + log_p / (2 * p)
    c0, cinf = kernel_log_at_centers(basis, cap_weight)
    mu = cylinder_measure(t, th, v,
                          cap_weight.phi_at_zero() + c0 / (2 * p),
                          cap_weight.phi_at_infinity() + cinf / (2 * p),
                          min_mass=-1e-6)
    assert mu.total_mass == pytest.approx(1.0, abs=1e-6)


def test_rate_fit_envelope_constant():
    ps = [10, 20, 40, 80]
    c_hat, violation = rate_fit([(p, 2.0 * math.log(p) / p) for p in ps])
    assert c_hat == pytest.approx(2.0, rel=1e-12)
    assert violation == 0.0
    with pytest.raises(UsageError):
        rate_fit([(10, 0.1), (20, 0.05)])
    with pytest.raises(UsageError):
        rate_fit([(2, 0.1), (20, 0.05), (40, 0.02), (80, 0.01)])
    with pytest.raises(InvalidFieldError):
        rate_fit([(10, 0.1), (20, -0.05), (40, 0.02), (80, 0.01)])
