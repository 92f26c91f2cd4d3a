import numpy as np
import pytest

from rbmlab.errors import HalfPlaneError, InsufficientSamplesError
from rbmlab.lattice import TorusLattice
from rbmlab.profile import build_profile, get_shape, mean_field_profile
from rbmlab.sampler import HermitianSample, Provenance, sample_band
from rbmlab.spectral import (
    ResolventContext,
    eigensolve,
    resolvent,
    resolvent_from_spectrum,
    second_order_residual,
    second_order_terms,
    semicircle_m,
    t_three,
    ward_residual,
    zero_mode_split,
)
from rbmlab.propagators import theta_circ_pairs


def _sample_from_matrix(mat):
    mat = np.asarray(mat, dtype=complex)
    return HermitianSample(TorusLattice(1, mat.shape[0]), mat, Provenance(0, 0, 0.0, "fixed"))


def test_semicircle_m_closed_form():
    m = semicircle_m(1j)
    assert abs(m - 1j * (np.sqrt(5) - 1) / 2) < 1e-14
    assert abs(semicircle_m(1e-4j) - 1j) < 1e-4


def test_semicircle_m_equation_and_imag_identity():
    z = 0.3 + 0.1j
    m = semicircle_m(z)
    assert abs(m * m + z * m + 1) < 1e-12
    assert abs(abs(m) ** 2 / (1 - abs(m) ** 2) - m.imag / z.imag) < 1e-12


def test_semicircle_m_branch_everywhere(rng):
    zs = rng.uniform(-3, 3, 1000) + 1j * rng.uniform(1e-3, 2, 1000)
    ms = semicircle_m(zs)
    assert np.all(ms.imag > 0)
    assert np.max(np.abs(ms * ms + zs * ms + 1)) < 1e-12
    with pytest.raises(HalfPlaneError):
        semicircle_m(0.5 - 0.1j)


def test_resolvent_trivial_cases():
    z = 0.3 + 0.2j
    ctx = resolvent(_sample_from_matrix([[0.7]]), z)
    assert abs(ctx.G[0, 0] - 1.0 / (0.7 - z)) < 1e-14
    ctx0 = resolvent(_sample_from_matrix(np.zeros((4, 4))), z)
    assert np.max(np.abs(ctx0.G + np.eye(4) / z)) < 1e-14


def test_resolvent_residual(medium_profile):
    ctx = resolvent(sample_band(medium_profile, 17, 0), 0.3 + 0.1j, medium_profile)
    n = ctx.N
    resid = np.max(np.abs((ctx.sample.matrix - ctx.z * np.eye(n)) @ ctx.G - np.eye(n)))
    assert resid <= 1e-10 * (1 + np.max(np.abs(ctx.G)))


def test_ward_identity_1x1_and_diagonal_case(medium_profile):
    z = 0.3 + 0.1j
    ctx1 = resolvent(_sample_from_matrix([[0.4]]), z)
    assert ward_residual(ctx1) < 1e-15
    ctx = resolvent(sample_band(medium_profile, 3, 1), z, medium_profile)
    assert ward_residual(ctx) <= 1e-9
    col = np.sum(np.abs(ctx.G[:, 5]) ** 2)
    assert abs(col - ctx.G[5, 5].imag / ctx.eta) < 1e-9


def test_t_three_against_brute_force():
    lat = TorusLattice(1, 16)
    prof = build_profile(get_shape("gaussian"), 2.0, lat)
    ctx = resolvent(sample_band(prof, 8, 0), 0.2 + 0.4j, prof)
    S = prof.dense_matrix()
    G = ctx.G
    mm = abs(ctx.m) ** 2
    for a, b1, b2 in [(0, 1, 3), (5, 5, 5), (2, 9, 14)]:
        brute = mm * sum(S[a, x] * G[x, b1] * np.conj(G[x, b2]) for x in range(16))
        assert abs(t_three(ctx, a, b1, b2) - brute) < 1e-12


def test_t_three_diagonal_cases(small_profile):
    z = 0.2 + 0.5j
    ctx = resolvent(sample_band(small_profile, 9, 0), z, small_profile)
    val = t_three(ctx, 3, 6, 6)
    assert val.imag == pytest.approx(0.0, abs=1e-15)
    assert val.real >= 0.0
    # H = 0: G = -I/z, so T_{a,b1b2} = |m|^2 s_ab1 delta_b1b2 / |z|^2
    zero_ctx = ResolventContext(
        z, ctx.m, -np.eye(8, dtype=complex) / z, ctx.sample, small_profile
    )
    S = small_profile.dense_matrix()
    mm = abs(ctx.m) ** 2
    assert abs(t_three(zero_ctx, 0, 2, 2) - mm * S[0, 2] / abs(z) ** 2) < 1e-14
    assert abs(t_three(zero_ctx, 0, 2, 3)) < 1e-15


def test_zero_mode_split(small_profile):
    ctx = resolvent(sample_band(small_profile, 4, 2), 0.2 + 0.5j, small_profile)
    n = ctx.N
    for sites in [(0, 1, 3), (2, 5, 5), (0, 0, 0)]:
        tc, zm = zero_mode_split(ctx, *sites)
        tt = t_three(ctx, *sites)
        assert abs(tt - (tc + zm)) <= 1e-12 * abs(tt)
    # b1 = b2: the zero mode is the real diagonal form
    _, zm = zero_mode_split(ctx, 0, 5, 5)
    expected = abs(ctx.m) ** 2 * ctx.G[5, 5].imag / (n * ctx.eta)
    assert abs(zm - expected) < 1e-15
    # averaging the centered part against the uniform vector gives zero
    total = sum(zero_mode_split(ctx, a, 1, 3)[0] for a in range(n))
    assert abs(total) < 1e-10


def test_second_order_terms_consistency(small_profile):
    z = 0.2 + 0.5j
    ctx = resolvent(sample_band(small_profile, 13, 5), z, small_profile)
    theta_row = theta_circ_pairs(small_profile, z, 0, np.arange(8))
    T, lead, zm, corr = second_order_terms(ctx, theta_row, 0, 1, 3)
    assert abs(T - t_three(ctx, 0, 1, 3)) < 1e-14
    tc, zm2 = zero_mode_split(ctx, 0, 1, 3)
    assert abs(zm - zm2) < 1e-14
    # the residual is the fluctuation part; it need not vanish per draw
    assert np.isfinite(abs(T - lead - zm - corr))


def test_second_order_residual_smoke_and_validation(small_profile):
    res = second_order_residual(small_profile, 0.2 + 0.5j, 0, 1, 3, 100, seed=5)
    assert np.isfinite(res.mean.real) and np.isfinite(res.stderr_re)
    assert res.trials == 100
    with pytest.raises(InsufficientSamplesError):
        second_order_residual(small_profile, 0.2 + 0.5j, 0, 1, 3, 99, seed=5)


def test_second_order_residual_mean_field():
    prof = mean_field_profile(TorusLattice(1, 8))
    res = second_order_residual(prof, 0.2 + 0.5j, 0, 1, 3, 4000, seed=6)
    zr, zi = res.zscores
    assert zr <= 5 and zi <= 5


def test_eigensolve_examples():
    spec = eigensolve(_sample_from_matrix(np.diag([1.0, 2.0, 3.0])))
    assert np.allclose(spec.eigenvalues, [1, 2, 3])
    assert np.allclose(np.abs(spec.eigenvectors), np.eye(3))


def test_eigensolve_invariants(medium_profile):
    s = sample_band(medium_profile, 2, 0)
    spec = eigensolve(s)
    n = s.lattice.N
    assert abs(spec.eigenvalues.sum() - np.trace(s.matrix).real) <= 1e-9 * n
    assert abs((spec.eigenvalues**2).sum() - np.linalg.norm(s.matrix, "fro") ** 2) <= 1e-8 * n
    U = spec.eigenvectors
    assert np.max(np.abs(U.conj().T @ U - np.eye(n))) <= 1e-10
    resid = np.max(
        np.linalg.norm(s.matrix @ U - U * spec.eigenvalues, axis=0)
    )
    assert resid <= 1e-8


def test_resolvent_from_spectrum_agreement():
    lat = TorusLattice(1, 64)
    prof = build_profile(get_shape("gaussian"), 4.0, lat)
    s = sample_band(prof, 14, 0)
    z = 0.3 + 0.1j
    spec = eigensolve(s)
    G_spec = resolvent_from_spectrum(spec, z)
    G_direct = resolvent(s, z).G
    assert np.max(np.abs(G_spec - G_direct)) <= 1e-8
    # Im G is positive semidefinite
    im_g = (G_spec - G_spec.conj().T) / 2j
    assert np.linalg.eigvalsh(im_g).min() >= -1e-10
    # N = 1 closed form
    one = resolvent_from_spectrum(eigensolve(_sample_from_matrix([[0.7]])), z)
    assert abs(one[0, 0] - 1 / (0.7 - z)) < 1e-14
