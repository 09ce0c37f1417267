import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefan_spde.basis import BasisSpec, SpectralBasis
from stefan_spde.enthalpy import EnthalpyModel, PhysicalParams
from stefan_spde.galerkin import BlowUp, GalerkinSystem, _sine_cos_overlap
from stefan_spde.noise import NoiseModel, NoiseSpec


def system(dim=2, m=8, M=None, params=None, noise=None, source=None, inner=False):
    b = SpectralBasis(BasisSpec(dim, m, M))
    em = EnthalpyModel(params or PhysicalParams())
    nm = NoiseModel(noise or NoiseSpec(K=8), b)
    return GalerkinSystem(b, em, nm, source, inner)


def heat_system(dim=2, m=8, source=None):
    return system(dim, m, params=PhysicalParams.heat(), noise=NoiseSpec(alpha0=0.0), source=source)


def warm_state(b: SpectralBasis, seed=0, scale=0.6):
    """Random band-limited state whose temperature crosses the cutoff and the mush."""
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(b.n) / (1 + b.lam / 50)
    c *= scale / np.max(np.abs(b.synthesize(c)))
    c[0] += 0.5
    return c


def test_heat_drift_is_minus_lambda():
    sys_ = heat_system()
    for j in (0, 3, 63):
        X = np.zeros(64)
        X[j] = 1.7
        np.testing.assert_allclose(sys_.drift(X), -sys_.basis.lam * X, rtol=1e-13, atol=1e-12)


def test_zero_state_has_zero_drift():
    sys_ = system()
    assert np.max(np.abs(sys_.drift(np.zeros(64)))) == 0.0


def test_forced_linear_case():
    b = SpectralBasis(BasisSpec(2, 8))
    F = np.zeros(64)
    F[5] = 1.0
    sys_ = heat_system(source=F)
    np.testing.assert_allclose(sys_.drift(np.zeros(64)), F, atol=1e-15)


def test_source_from_grid_field_is_projected():
    b = SpectralBasis(BasisSpec(2, 8))
    F = np.random.default_rng(1).standard_normal(64)
    sys_ = heat_system(source=b.synthesize(F))
    np.testing.assert_allclose(sys_.source_coeffs, F, atol=1e-13)


def test_linearity_in_source():
    b = SpectralBasis(BasisSpec(2, 8))
    rng = np.random.default_rng(2)
    F1, F2 = rng.standard_normal(64), rng.standard_normal(64)
    X = warm_state(b)
    d12 = system(source=F1 + F2).drift(X)
    d1 = system(source=F1).drift(X)
    d0 = system(source=np.zeros(64)).drift(X)
    np.testing.assert_allclose(d12, d1 + (system(source=F2).drift(X) - d0), atol=1e-11)


def test_outputs_lie_in_Hn():
    sys_ = system()
    b = sys_.basis
    X = warm_state(b)
    t = sys_.evaluate(X)
    np.testing.assert_allclose(b.project(b.synthesize(t.drift)), t.drift, atol=1e-10)
    np.testing.assert_allclose(b.project(b.synthesize(t.diffusion)), t.diffusion, atol=1e-10)


def test_diffusion_zero_below_cutoff_and_without_noise():
    sys_ = system()
    X = np.zeros(64)
    X[0] = 0.02  # theta <= 0.04 < eps everywhere
    assert not np.any(sys_.diffusion(X))
    quiet = system(noise=NoiseSpec(alpha0=0.0))
    assert quiet.diffusion(warm_state(quiet.basis)).shape == (0, 64)


def test_separable_diffusion_matches_transform_route():
    sys_ = system()
    X = warm_state(sys_.basis, 4)
    Phi = sys_.enthalpy.eta(sys_.enthalpy.gamma_tilde_inv(sys_.basis.synthesize(X)))
    a = sys_.diffusion_columns(Phi)
    b = sys_.diffusion_columns_transform(Phi)
    assert np.max(np.abs(a - b)) <= 1e-13 * max(1.0, np.max(np.abs(b)))


def _ibp_gap(M):
    sys_ = system(M=M)
    b = sys_.basis
    c = warm_state(SpectralBasis(BasisSpec(2, 8)), 6)
    cols = sys_.diffusion_columns(b.synthesize(c))
    transport = sys_.noise.alpha[:, None, None] * np.einsum("kcmn,cmn->kmn", sys_.noise.sigma, b.gradient(c))
    return np.max(np.abs(cols + b.project(transport)))


def test_diffusion_is_minus_projection_of_transport():
    """alpha_k (Phi, sigma_k . grad e_j) = -(alpha_k sigma_k . grad Phi, e_j) up to O(h^2) quadrature error.

    The integrands contain odd sine terms on which the interior trapezoid rule
    is second order, so the gap must shrink by ~4 per grid doubling.
    """
    gaps = [_ibp_gap(M) for M in (40, 80, 160)]
    assert gaps[0] / gaps[1] > 3.5 and gaps[1] / gaps[2] > 3.5
    assert gaps[2] <= 1e-8


def test_projection_contracts_the_noise():
    sys_ = system()
    b, em, nm = sys_.basis, sys_.enthalpy, sys_.noise
    X = warm_state(b, 8)
    cols = sys_.diffusion(X)
    # pre-projection norm on a 4x finer grid from the exact band-limited state
    fine = b.refined(4 * b.M)
    fnoise = NoiseModel(nm.spec, fine)
    Phi = em.eta(em.gamma_tilde_inv(fine.synthesize(X)))
    grad = fine.interpolant_gradient(Phi)
    transport = fnoise.alpha[:, None, None] * np.einsum("kcmn,cmn->kmn", fnoise.sigma, grad)
    pre = np.sum(fine.quad(transport ** 2))
    post = np.sum(cols ** 2)
    assert post <= pre


def test_ito_stratonovich_correction_identity():
    """With eta(r) = r the correction drift is 1/2 sum_k alpha_k^2 div[sigma_k (sigma_k . grad X)].

    Both sides are second-order grid quadratures of the same integral; on a
    10x oversampled grid they agree to 1e-8.
    """
    sys_ = system(m=4, M=40, noise=NoiseSpec(K=6))
    b, nm = sys_.basis, sys_.noise
    X = np.random.default_rng(9).standard_normal(b.n)
    G = 0.5 * b.synthesize(X)  # g(theta) = theta / 2 when eta' = 1, gamma~ = id
    corr = sys_.correction_term(G)
    grad = b.gradient(X)
    expect = np.zeros(b.n)
    for k in range(nm.K):
        v = np.einsum("cmn,cmn->mn", nm.sigma[k], grad)
        # (div[sigma v], e_j) = -(v, sigma . grad e_j)
        expect -= 0.5 * nm.alpha[k] ** 2 * (b.test_against(v * nm.sigma[k, 0], (1, 0))
                                            + b.test_against(v * nm.sigma[k, 1], (0, 1)))
    np.testing.assert_allclose(corr, expect, atol=1e-8 * max(1.0, np.max(np.abs(expect))))


def test_sine_cosine_overlap_closed_form():
    m = 6
    D = _sine_cos_overlap(m)
    x = np.linspace(0, 1, 20001)
    for p in range(1, m + 1):
        for q in range(1, m + 1):
            f = 2 * np.sin(p * math.pi * x) * q * math.pi * np.cos(q * math.pi * x)
            assert D[q - 1, p - 1] == pytest.approx(np.trapezoid(f, x), abs=1e-6)


def test_literal_inner_projection_against_fine_quadrature():
    sys_ = system(inner=True)
    b, nm = sys_.basis, sys_.noise
    X = warm_state(b, 3)
    em = sys_.enthalpy
    G = em.g_of(em.gamma_tilde_inv(b.synthesize(X)))
    got = sys_.correction_term(G)
    # -(P_n (Q grad G)_c, d_c e_j) with P_n (Q grad G)_c synthesised on a closed fine grid
    V = np.einsum("icmn,cmn->imn", nm.Q, b.interpolant_gradient(G))
    coeffs = [b.project(V[c]) for c in range(2)]
    x = np.linspace(0, 1, 801)
    w = np.full(x.size, x[1])
    w[[0, -1]] *= 0.5
    mesh = np.meshgrid(x, x, indexing="ij")
    S = math.sqrt(2) * np.sin(math.pi * np.outer(np.arange(1, b.m + 1), x))
    fields = [S.T @ b.to_modal(c) @ S for c in coeffs]
    for j in (0, 4, 17):
        g = b.eigenfunction_gradient(j, *mesh)
        val = -sum(np.einsum("mn,m,n->", fields[c] * g[c], w, w) for c in range(2))
        assert got[j] == pytest.approx(val, abs=1e-6 * max(1.0, abs(val)))


def test_stable_dt_formula():
    sys_ = heat_system(dim=1, m=16)
    assert sys_.stable_dt() == pytest.approx(0.5 / (256 * math.pi ** 2 + 1), rel=1e-15)
    noisy = system(m=16, noise=NoiseSpec(K=32))
    quiet = system(m=16, noise=NoiseSpec(alpha0=0.0))
    lam = noisy.basis.lam_max
    assert noisy.stable_dt() == pytest.approx(0.5 / (lam + noisy.noise.gamma_const * lam + 1), rel=1e-15)
    assert quiet.stable_dt() == pytest.approx(0.5 / (lam + 1), rel=1e-15)
    dts = [system(m=m, noise=NoiseSpec(K=8)).stable_dt() for m in (4, 8, 16)]
    assert dts[0] > dts[1] > dts[2] > 0


def test_step_em_deterministic_heat():
    sys_ = heat_system()
    X = np.random.default_rng(0).standard_normal(64)
    dt = 1e-4
    Xn, _ = sys_.step_em(X, dt, np.zeros(0))
    np.testing.assert_allclose(Xn, (1 - sys_.basis.lam * dt) * X, rtol=1e-12, atol=1e-14)


def test_zero_increments_reproduce_explicit_euler():
    sys_ = system()
    X = warm_state(sys_.basis, 5)
    dt = 1e-5
    Xn, t = sys_.step_em(X, dt, np.zeros(sys_.K))
    np.testing.assert_array_equal(Xn, X + t.drift * dt)


def test_step_uses_diffusion_columns():
    sys_ = system()
    X = warm_state(sys_.basis, 5)
    dW = np.random.default_rng(1).standard_normal(sys_.K) * 1e-3
    Xn, t = sys_.step_em(X, 1e-5, dW)
    np.testing.assert_allclose(Xn, X + t.drift * 1e-5 + dW @ t.diffusion, atol=1e-15)


def test_richardson_order_of_one_step_defect():
    sys_ = heat_system()
    X = np.zeros(64)
    X[0] = 1.0

    def defect(dt):
        full, _ = sys_.step_em(X, dt, np.zeros(0))
        half, _ = sys_.step_em(X, dt / 2, np.zeros(0))
        half, _ = sys_.step_em(half, dt / 2, np.zeros(0))
        return abs(full[0] - half[0])

    order = math.log2(defect(1e-3) / defect(5e-4))
    assert order == pytest.approx(2.0, abs=1e-3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_batched_evaluation_equals_single(seed, B):
    sys_ = system()
    rng = np.random.default_rng(seed)
    X = np.stack([warm_state(sys_.basis, int(s)) for s in rng.integers(0, 1000, B)])
    dW = rng.standard_normal((B, sys_.K)) * 1e-3
    batch, _ = sys_.step_em(X, 1e-5, dW)
    for i in range(B):
        single, _ = sys_.step_em(X[i], 1e-5, dW[i])
        np.testing.assert_array_equal(batch[i], single)


def test_non_finite_state_raises_blowup():
    sys_ = system()
    X = np.zeros(64)
    X[3] = np.inf
    with pytest.raises(BlowUp):
        sys_.evaluate(X)
