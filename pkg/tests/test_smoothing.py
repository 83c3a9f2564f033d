import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from spde_hjb.config import ModelConfig
from spde_hjb.errors import BadWeight, DegeneratePencil, RangeViolation
from spde_hjb.smoothing import (
    LiftDiscretization,
    default_lift,
    duality_constant,
    fit_exponent,
    integrated_norm,
    lambda_norm,
    lambda_operator,
    lift_adjoint_apply,
    lift_adjoint_check,
    lift_apply,
    lift_operator,
    lifted_lambda_norm,
    l2rho_inner,
)
from spde_hjb.spectral import make_model


def _no_control(m):
    return dataclasses.replace(m, control_matrix=np.zeros_like(m.control_matrix))


def _no_noise(m):
    return dataclasses.replace(m, noise_matrix=np.zeros_like(m.noise_matrix),
                               sigma_coeffs=np.zeros_like(m.sigma_coeffs))


def test_zero_control(heat, wave):
    for m in (heat, wave):
        z = _no_control(m)
        assert np.all(lambda_operator(z, 0.01).matrix == 0)
        assert lambda_norm(z, 0.01) == 0
        assert duality_constant(z, 0.01) == 0
        assert lifted_lambda_norm(z, default_lift(), 0.01) == 0


def test_heat_one_mode_closed_form(heat):
    lam1 = np.pi**2
    for t in (1e-5, 1e-3, 0.1, 2.0):
        row = np.abs(lambda_operator(heat, t).matrix[0])
        expected = np.exp(-lam1 * t) * np.sqrt(2) * np.pi / np.sqrt((1 - np.exp(-2 * lam1 * t)) / lam1)
        assert np.allclose(row, expected, rtol=1e-10)
        # scalar duality: |M|^2 / qbar
        m2 = 2 * (np.exp(-lam1 * t) * np.sqrt(2) * np.pi) ** 2
        assert duality_constant(heat, t) == pytest.approx(m2 / ((1 - np.exp(-2 * lam1 * t)) / lam1), rel=1e-10)


def test_wave_norm_scales_like_inverse_sqrt(wave):
    ts = np.geomspace(1e-4, 1e-2, 12)
    scaled = np.array([lambda_norm(wave, t) * np.sqrt(t) for t in ts])
    assert scaled.min() > 1.0 and scaled.max() < 3.0


def test_heat_norm_diverges(heat):
    assert lambda_norm(heat, 1e-6) > lambda_norm(heat, 1e-2)


def test_heat_projected_slope(heat):
    rep = fit_exponent(heat, 1e-5, 1e-2, 16)
    assert rep.fitted_exponent >= -(1 - 0.1) - 0.1


def test_fit_exponent_examples(heat64, wave):
    rw = fit_exponent(wave, 1e-4, 1e-2, 16)
    assert rw.fitted_exponent == pytest.approx(-0.5, abs=0.1) and rw.fit_r2 >= 0.98
    assert rw.unprojected_exponent is None
    rh = fit_exponent(heat64, 1e-4, 1e-2, 16)
    assert rh.fitted_exponent >= -1
    assert rh.unprojected_exponent <= -1 and rh.unprojected_r2 >= 0.98
    # kappa0 certifies the bound on the samples
    bound = rh.kappa0 * np.maximum(rh.t_samples**-rh.gamma, 1.0)
    assert np.all(rh.norms <= bound * (1 + 1e-12))
    assert np.all(np.isfinite(rh.norms)) and np.all(rh.norms > 0)
    with pytest.raises(ValueError):
        fit_exponent(wave, 1e-2, 1e-4, 16)
    with pytest.raises(ValueError):
        fit_exponent(wave, 1e-4, 1e-2, 4)


@pytest.mark.parametrize("kind", ["heat", "wave"])
def test_duality_equals_norm_squared(kind):
    m = make_model(ModelConfig(kind=kind, dim_h=16))
    for t in np.geomspace(1e-6, 10, 20):
        assert duality_constant(m, t) == pytest.approx(lambda_norm(m, t) ** 2, rel=1e-8)


def test_duality_multi_mode_wave():
    m = make_model(ModelConfig(kind="wave", dim_h=6, projection_modes=[1, 2, 4]))
    for t in (1e-4, 0.05, 1.3):
        assert duality_constant(m, t) == pytest.approx(lambda_norm(m, t) ** 2, rel=1e-8)


def test_range_residual_small_everywhere(heat, wave):
    for m in (heat, wave):
        for t in np.geomspace(1e-6, 10, 12):
            lr = lambda_operator(m, t)
            m_img, _ = m.smoothing_pair(t)
            assert lr.residual <= 1e-8 * np.linalg.norm(m_img, 2)


def test_range_violation_without_noise(heat):
    with pytest.raises(RangeViolation):
        lambda_operator(_no_noise(heat), 0.01)
    with pytest.raises(DegeneratePencil):
        duality_constant(_no_noise(heat), 0.01)


def test_integrated_norm_finite(heat, wave):
    for m in (heat, wave):
        val = integrated_norm(m)
        assert np.isfinite(val) and val > 0
        # oracle: adaptive quadrature after t = u^2 removes the t^{-1/2} singularity
        ref = quad(lambda u: 2 * u * lambda_norm(m, u * u), 0, 1, epsabs=1e-10, limit=200)[0]
        assert val == pytest.approx(ref, rel=1e-3)


def test_lift_discretization_validation():
    with pytest.raises(ValueError):
        LiftDiscretization(np.array([1.0, 0.5]), np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError):
        LiftDiscretization(np.array([0.5, 1.0]), np.array([1.0, -1.0]), 1.0)
    with pytest.raises(BadWeight):
        default_lift(rho=0.0)


def test_lift_bad_weight(heat):
    disc = LiftDiscretization(np.array([0.1, 1.0]), np.array([1.0, 1.0]), 0.0)
    with pytest.raises(BadWeight):
        lift_operator(heat, disc)


def test_lift_zero_state(heat):
    disc = default_lift()
    assert np.all(lift_apply(heat, disc, np.zeros(heat.state_dim)) == 0)


def test_lift_norm_vs_refined_quadrature(heat, wave, rng):
    for m in (heat, wave):
        for _ in range(3):
            y = rng.standard_normal(m.state_dim)
            coarse = lift_operator(m, default_lift(1.0, 80)) @ y
            fine = lift_operator(m, default_lift(1.0, 640, t_min=1e-9, horizon=30.0)) @ y
            assert np.sum(coarse**2) == pytest.approx(np.sum(fine**2), rel=1e-4)


def test_lift_matrix_matches_trajectory_form(wave, rng):
    disc = default_lift(1.0, 40)
    y = rng.standard_normal(wave.state_dim)
    traj = lift_apply(wave, disc, y)
    via_matrix = lift_operator(wave, disc) @ y
    assert np.sum(via_matrix**2) == pytest.approx(l2rho_inner(disc, traj, traj), rel=1e-12)


def test_lift_heat_hbar_normalised_finite(heat64, rng):
    disc = default_lift()
    x = rng.standard_normal(heat64.state_dim) / heat64.hbar_weights  # rough in H, unit scale in HBar
    x /= np.linalg.norm(heat64.hbar_weights * x)
    val = np.linalg.norm(lift_operator(heat64, disc) @ x)
    assert np.isfinite(val) and val < 1e3


@pytest.mark.parametrize("kind", ["heat", "wave"])
def test_lift_adjoint(kind, rng):
    m = make_model(ModelConfig(kind=kind, dim_h=8))
    disc = default_lift()
    assert lift_adjoint_check(m, disc, np.zeros((80, m.dim_p)), rng=rng) == 0
    worst = max(lift_adjoint_check(m, disc, rng.standard_normal((80, m.dim_p)), rng=rng) for _ in range(50))
    assert worst <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), rho=st.floats(0.1, 5.0))
def test_lift_adjoint_property(seed, rho):
    m = make_model(ModelConfig(kind="wave", dim_h=4))
    disc = default_lift(rho, 30)
    r = np.random.default_rng(seed)
    z = r.standard_normal((30, m.dim_p))
    y = r.standard_normal(m.state_dim)
    lhs = l2rho_inner(disc, lift_apply(m, disc, y), z)
    rhs = y @ lift_adjoint_apply(m, disc, z)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_lifted_norm_agrees_with_unlifted(heat, wave):
    d1, d2 = default_lift(1.0, 80), default_lift(1.0, 160)
    for m in (heat, wave):
        for t in (1e-3, 1e-2, 1e-1):
            base = lambda_norm(m, t)
            g1 = abs(lifted_lambda_norm(m, d1, t) - base) / base
            g2 = abs(lifted_lambda_norm(m, d2, t) - base) / base
            assert g1 <= 5e-2
            assert g2 <= g1 / 2 or max(g1, g2) <= 1e-9
