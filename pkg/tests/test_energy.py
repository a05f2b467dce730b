import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metareg.core import DegenerateMaskError, ParameterError, RegParams, ShapeError
from metareg.energy import (
    DEFAULT_LAMBDAS,
    EnergyBreakdown,
    energy,
    energy_and_grad,
    evaluate,
    jacobian_det,
    jdet_penalty,
    jdet_penalty_grad,
    reg_diffusion,
    reg_diffusion_grad,
    sim_mse,
    sim_mse_masked,
)
from metareg.gradcheck import check_gradient, random_instance
from conftest import smooth_params


def test_default_lambdas():
    assert DEFAULT_LAMBDAS == (1.0, 1.0, 0.001)


def test_breakdown_total_is_weighted_sum():
    e = EnergyBreakdown.build(2.0, 3.0, 5.0, (1.0, 0.5, 0.1))
    assert e.total == 2.0 + 1.5 + 0.5
    assert e.as_dict() == {"sim": 2.0, "reg_q": 3.0, "jdet": 5.0, "total": 4.0}


def test_sim_mse_hand_value():
    assert sim_mse([[0.0, 1.0]], [[1.0, 1.0]]) == 0.5
    with pytest.raises(ShapeError):
        sim_mse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_sim_masked_modes():
    a = np.array([[0.0, 0.0], [0.0, 0.0]])
    b = np.array([[1.0, 2.0], [0.0, 0.0]])
    m = np.array([[0, 1], [0, 0]])
    assert sim_mse_masked(a, b, m, "metamorphic") == pytest.approx(5.0 / 4)
    assert sim_mse_masked(a, b, m, "cfm") == pytest.approx(1.0 / 3)
    with pytest.raises(DegenerateMaskError):
        sim_mse_masked(a, b, np.ones((2, 2)), "cfm")
    with pytest.raises(ParameterError):
        sim_mse_masked(a, b, m, "nope")


def test_reg_diffusion_hand_value():
    # forward diffs: dx = [[1, 0], [2, 0]], dy = [[2, 3], [0, 0]]
    qm = np.array([[0.0, 1.0], [2.0, 4.0]])
    assert reg_diffusion(qm) == pytest.approx((1 + 4 + 4 + 9) / 4)
    assert reg_diffusion(np.full((3, 3), 7.0)) == 0.0


def test_reg_diffusion_grad_fd(rng):
    qm = rng.normal(size=(4, 5))
    g = reg_diffusion_grad(qm)
    eps = 1e-6
    for i in range(4):
        for j in range(5):
            d = np.zeros_like(qm)
            d[i, j] = eps
            fd = (reg_diffusion(qm + d) - reg_diffusion(qm - d)) / (2 * eps)
            assert g[i, j] == pytest.approx(fd, abs=1e-8)


def test_jacobian_of_affine_map():
    y, x = np.mgrid[0:4, 0:4].astype(float)
    # phi(p) = A p with A = [[2, 0.5], [0.25, 3]]
    d = np.stack([1.0 * x + 0.5 * y, 0.25 * x + 2.0 * y])
    np.testing.assert_allclose(jacobian_det(d), 2 * 3 - 0.5 * 0.25)
    assert jdet_penalty(d) == 0.0


def test_jdet_penalty_of_reflection():
    y, x = np.mgrid[0:3, 0:3].astype(float)
    d = np.stack([-2.0 * x, np.zeros_like(x)])  # phi_x = -x, det = -1
    assert jdet_penalty(d) == pytest.approx(9.0)


def test_jdet_grad_fd_on_folded_field(rng):
    y, x = np.mgrid[0:6, 0:6].astype(float)
    d = np.stack([-1.6 * x + 0.3 * np.sin(y), 0.2 * np.cos(x)]) + rng.normal(0, 0.05, (2, 6, 6))
    J = jacobian_det(d)
    assert (J < 0).any() and (J > 0).any() or (J < 0).all()
    g = jdet_penalty_grad(d)
    eps = 1e-7
    for _ in range(25):
        c, i, j = rng.integers(0, 2), rng.integers(0, 6), rng.integers(0, 6)
        dp = np.zeros_like(d)
        dp[c, i, j] = eps
        fd = (jdet_penalty(d + dp) - jdet_penalty(d - dp)) / (2 * eps)
        assert g[c, i, j] == pytest.approx(fd, abs=1e-6)


def test_identity_energy_is_zero(rng):
    img = rng.random((6, 6))
    e, g = energy_and_grad(RegParams.zeros(3, 6, 6), img, img, np.zeros((6, 6), bool))
    assert e.total == 0.0
    assert not g.v_sd.any() and not g.r_iv.any()


def test_mask_required_except_diffeo(rng):
    img = rng.random((4, 4))
    p = RegParams.zeros(2, 4, 4)
    with pytest.raises(ParameterError):
        energy(p, img, img, None, "metamorphic")
    assert energy(p, img, img, None, "diffeo").total == 0.0


def test_cfm_all_ones_mask_rejected(rng):
    img = rng.random((4, 4))
    with pytest.raises(DegenerateMaskError):
        energy(RegParams.zeros(2, 4, 4), img, img, np.ones((4, 4), bool), "cfm")


def test_q_branch_dropped_outside_metamorphic(rng):
    p = smooth_params(rng, 2, 5, 5)
    I0, I1 = rng.random((5, 5)), rng.random((5, 5))
    m = np.zeros((5, 5), bool)
    m[1:3, 1:3] = True
    for mode in ("cfm", "diffeo"):
        ev = evaluate(p, I0, I1, m, mode)
        assert not ev.q.any()
        assert not ev.grad.r_iv.any()
        assert ev.breakdown.reg_q == 0.0


def test_intensity_gradient_zero_outside_mask(rng):
    p = smooth_params(rng, 3, 6, 6)
    m = np.zeros((6, 6), bool)
    m[2:4, 1:5] = True
    _, g = energy_and_grad(p, rng.random((6, 6)), rng.random((6, 6)), m)
    assert not g.r_iv[:, ~m].any()
    assert g.r_iv[:, m].any()


@pytest.mark.parametrize("mode", ["metamorphic", "cfm", "diffeo"])
@pytest.mark.parametrize("steps", [1, 3])
def test_gradient_matches_finite_differences(mode, steps):
    params, I0, I1, mask = random_instance(5, steps, mode, seed=steps)
    res = check_gradient(params, I0, I1, mask, mode)
    assert res.max_rel_err < 1e-4, res


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["metamorphic", "cfm", "diffeo"]))
def test_directional_derivative(seed, mode):
    rng = np.random.default_rng(seed)
    params, I0, I1, mask = random_instance(6, 2, mode, seed)
    e0, g = energy_and_grad(params, I0, I1, mask, mode)
    d = RegParams(rng.normal(size=params.v_sd.shape), rng.normal(size=params.r_iv.shape))
    h = 1e-6
    plus = RegParams(params.v_sd + h * d.v_sd, params.r_iv + h * d.r_iv)
    minus = RegParams(params.v_sd - h * d.v_sd, params.r_iv - h * d.r_iv)
    fd = (energy(plus, I0, I1, mask, mode).total - energy(minus, I0, I1, mask, mode).total) / (2 * h)
    ad = float(np.dot(g.flat(), d.flat()))
    assert ad == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_more_hand_values():
    assert sim_mse([[0.5]], [[0.1]]) == pytest.approx(0.16)
    assert sim_mse([[1.0, 1.0]], [[0.0, 0.0]]) == 1.0
    assert sim_mse_masked([[1.0, 0.0]], [[0.0, 0.0]], [[1, 0]], "metamorphic") == 0.5
    x_ramp = np.tile(np.arange(3.0), (3, 1))
    assert reg_diffusion(x_ramp) == pytest.approx(6 / 9)
