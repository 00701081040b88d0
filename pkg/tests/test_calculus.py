import numpy as np
import pytest

from oracles import rk4
from roughchaos.calculus import (DivergenceError, constant_field, gradient_form, identity_form,
                                 linear_field, rde_solve, rough_integral,
                                 rough_integral_refinement_check)
from roughchaos.lift import LiftConfig, lift_brownian, lift_piecewise_linear
from roughchaos.roughpath import RoughPathError

COS = gradient_form(lambda y: np.cos(y), lambda y: -np.sin(y)[..., None], 1,
                    bounds={"value": 1.0, "d1": 1.0, "d2": 1.0}, name="cos")


def _bm(dim=1, m=256, r=4, seed=0):
    return lift_brownian(dim, 1.0, LiftConfig(m, r, seed=seed))


def test_constant_field_gives_increment():
    p = _bm(2)
    c = np.array([[1.0, -2.0]])
    val = rough_integral(constant_field(c, 2), p)
    assert val[0] == pytest.approx(c[0] @ (p.level1[-1] - p.level1[0]), abs=1e-12)


def test_time_path_identity_form():
    m = 64
    t = np.linspace(0, 1, m + 1)[:, None]
    # int_0^1 t dt = 1/2, exact for the compensated sum on a linear path
    assert rough_integral(identity_form(1), lift_piecewise_linear(t))[0] == pytest.approx(0.5, abs=1e-14)


def test_linear_in_integrand():
    p = _bm(2, seed=3)
    A = linear_field([[[1.0, 2.0], [0.0, -1.0]], [[0.5, 0.0], [3.0, 1.0]]])
    B = linear_field([[[0.0, 1.0], [1.0, 0.0]], [[-1.0, 0.0], [0.0, 2.0]]])
    AB = linear_field(np.array([[[1.0, 3.0], [1.0, -1.0]], [[-0.5, 0.0], [3.0, 3.0]]]))
    # linear_field outputs are vectors; sum componentwise
    np.testing.assert_allclose(rough_integral(AB, p), rough_integral(A, p) + rough_integral(B, p),
                               atol=1e-11)


def test_brownian_ito_stratonovich():
    p = _bm(1, m=512, seed=7)
    x = p.level1[:, 0]
    # geometric lift: int X dX = (X_T^2 - X_0^2) / 2 exactly
    assert rough_integral(identity_form(1), p)[0] == pytest.approx(0.5 * (x[-1] ** 2 - x[0] ** 2),
                                                                   abs=1e-12)


def test_identity_form_multidim_antisymmetric_part():
    p = _bm(2, m=128, seed=8)
    # sum_i int X^i dX^i depends only on endpoints
    x = p.level1
    expected = 0.5 * (np.sum(x[-1] ** 2) - np.sum(x[0] ** 2))
    assert rough_integral(identity_form(2), p)[0] == pytest.approx(expected, abs=1e-11)


def test_stride_must_divide():
    with pytest.raises(RoughPathError):
        rough_integral(identity_form(1), _bm(1, m=12), partition_stride=5)


def test_refinement_converges_to_closed_form():
    p = _bm(1, m=1024, r=4, seed=11)
    rep = rough_integral_refinement_check(COS, p)
    x = p.level1[:, 0]
    truth = np.sin(x[-1]) - np.sin(x[0])
    assert abs(rep.values[-1][0] - truth) < 5e-3
    assert rep.cauchy and rep.decay_exponent > 0
    assert rep.bound_ok
    coarse_err = abs(rep.values[2][0] - truth)
    assert abs(rep.values[-1][0] - truth) < coarse_err


def test_refinement_constant_field_exact():
    rep = rough_integral_refinement_check(constant_field([[1.0]], 1), _bm(1, m=64))
    assert max(rep.differences) < 1e-12


def test_refinement_needs_power_of_two():
    with pytest.raises(RoughPathError):
        rough_integral_refinement_check(COS, _bm(1, m=48))


def test_jacobians_match_finite_differences():
    rng = np.random.default_rng(0)
    assert COS.check_jacobian(rng) < 1e-6
    assert linear_field([[[1.0, 2.0], [3.0, 4.0]]]).check_jacobian(rng) < 1e-6
    assert identity_form(3).check_jacobian(rng) < 1e-6


def test_linear_rde_smooth_drive_gives_e():
    m = 1024
    t = lift_piecewise_linear(np.linspace(0, 1, m + 1)[:, None])
    ys = rde_solve(None, linear_field([[[1.0]]]), t, [1.0])
    assert abs(ys[-1, 0] - np.e) < 1e-4


@pytest.mark.parametrize("a", [0.7, -1.3])
def test_linear_rde_brownian_converges(a):
    # local error is a^3 dX^3 / 6, so the terminal error shrinks like 1/m
    errs = []
    for m in (64, 1024):
        p = lift_brownian(1, 1.0, LiftConfig(m, 4096 // m, seed=12))
        ys = rde_solve(None, linear_field([[[a]]]), p, [1.0])
        x = p.level1[:, 0]
        errs.append(abs(ys[-1, 0] / np.exp(a * (x[-1] - x[0])) - 1))
    assert errs[1] < errs[0]
    assert errs[1] < abs(a) ** 3 * 4 / 1024


def test_linear_rde_two_dimensional_commuting():
    p = _bm(2, m=1024, r=4, seed=13)
    A1 = np.diag([0.5, -0.2])
    A2 = np.diag([0.1, 0.3])
    ys = rde_solve(None, linear_field([A1, A2]), p, [1.0, 2.0])
    x = p.level1[-1] - p.level1[0]
    exact = np.array([1.0, 2.0]) * np.exp(np.diag(A1) * x[0] + np.diag(A2) * x[1])
    np.testing.assert_allclose(ys[-1], exact, rtol=5e-3)


def test_ode_drive_matches_rk4():
    m = 512
    t = np.linspace(0, 1, m + 1)[:, None]
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    ys = rde_solve(None, linear_field([rot]), lift_piecewise_linear(t), [1.0, 0.0])
    ref = rk4(lambda s, y: rot @ y, [1.0, 0.0], 0.0, 1.0, 2000)
    # second-order scheme: global error O(h^2)
    np.testing.assert_allclose(ys[-1], ref, atol=5.0 / m ** 2)


def test_drift_term():
    m = 1000
    p = lift_piecewise_linear(np.zeros((m + 1, 1)))
    f0 = linear_field([[[-1.0]]])
    ys = rde_solve(f0, constant_field([[0.0]], 1), p, [1.0])
    assert ys[-1, 0] == pytest.approx((1 - 1 / m) ** m, rel=1e-12)


def test_divergence_raises():
    p = lift_piecewise_linear(np.linspace(0, 1, 101)[:, None])
    with np.errstate(all="ignore"), pytest.raises(DivergenceError):
        rde_solve(None, linear_field([[[1e200]]]), p, [1.0])


def test_shape_errors():
    p = _bm(1, m=8)
    with pytest.raises(RoughPathError):
        rde_solve(None, linear_field([[[1.0]]]), p, [1.0, 2.0])
    with pytest.raises(RoughPathError):
        rde_solve(None, linear_field(np.zeros((2, 1, 1))), p, [1.0])


def test_as_rough_path_output():
    p = _bm(1, m=16)
    out = rde_solve(None, linear_field([[[0.3]]]), p, [1.0], as_rough_path=True)
    assert out.steps == 16
