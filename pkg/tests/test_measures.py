import numpy as np
import pytest

from roughchaos.lift import LiftConfig, ResourceError, levy_area, lift_k_layer, map_F_k, total_level2
from roughchaos.measures import (PathMeasure, RoughPathMeasure, empirical_from_ensemble,
                                 enhanced_k_layer, load_measure, modified_moment, project_Pi2,
                                 project_pi1, save_measure)
from roughchaos.particle import dirac_law, gaussian_law, simulate_brownian_ensemble


def _ens(n, m=8, seed=0, dim=1):
    return simulate_brownian_ensemble(gaussian_law(0, 1, dim), n, dim, 1.0, m, seed)


def test_empirical_measure_weights_and_integral():
    ens = _ens(5)
    mu = empirical_from_ensemble(ens)
    np.testing.assert_array_equal(mu.weights, 0.2)
    assert mu.integrate(lambda p: p[-1, 0]) == pytest.approx(ens.paths[:, -1, 0].mean(), abs=1e-15)
    np.testing.assert_array_equal(mu.marginal(3), ens.paths[:, 3])


def test_weight_validation():
    with pytest.raises(ValueError):
        PathMeasure(np.zeros((2, 3, 1)), np.linspace(0, 1, 3), [0.7, 0.7])
    with pytest.raises(ValueError):
        PathMeasure(np.zeros((2, 3, 1)), np.linspace(0, 1, 4))


def test_enhanced_two_particles_two_layers():
    ens = _ens(2)
    mu = enhanced_k_layer(ens, 2)
    assert mu.size == 4 and mu.exact and mu.k == 2
    np.testing.assert_allclose(mu.weights, 0.25)
    for a, (i, j) in enumerate(mu.tuples):
        ref = lift_k_layer([ens.paths[i], ens.paths[j]])
        np.testing.assert_array_equal(mu.atom(a).level2, ref.level2)
        np.testing.assert_array_equal(mu.atom(a).level1, ref.level1)


def test_enhanced_equals_F_k_of_empirical():
    ens = _ens(3, seed=1)
    a = enhanced_k_layer(ens, 2)
    b = map_F_k(empirical_from_ensemble(ens), 2)
    np.testing.assert_array_equal(a.level2, b.level2)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_projections():
    ens = _ens(3, seed=2)
    mu = enhanced_k_layer(ens, 3)
    first = project_pi1(mu)
    assert first.size == 3
    np.testing.assert_allclose(first.weights, 1 / 3, atol=1e-15)
    np.testing.assert_array_equal(first.paths, ens.paths)
    two = project_Pi2(mu)
    # the marginal on the first two layers is the 2-layer enhanced measure
    ref = enhanced_k_layer(ens, 2)
    assert two.size == 9
    np.testing.assert_allclose(two.weights, ref.weights, atol=1e-15)
    np.testing.assert_array_equal(two.level2, ref.level2)
    with pytest.raises(ValueError):
        project_Pi2(enhanced_k_layer(ens, 1))


def test_refined_lift_through_config():
    cfg = LiftConfig(4, 4)
    ens = _ens(2, m=16, seed=3)
    mu = enhanced_k_layer(ens, 2, cfg=cfg)
    assert mu.level2.shape == (4, 4, 2, 2) and mu.level1.shape == (4, 5, 2)
    ref = lift_k_layer([ens.paths[0], ens.paths[1]], cfg)
    np.testing.assert_array_equal(mu.atom(1).level2, ref.level2)


def test_budget_and_sampling():
    ens = _ens(60, seed=4)
    exact = enhanced_k_layer(ens, 2, tuple_budget=10**4)
    assert exact.exact
    with pytest.raises(ResourceError):
        enhanced_k_layer(ens, 2, tuple_budget=100, allow_sampling=False)
    sampled = enhanced_k_layer(ens, 2, tuple_budget=3000, seed=5)
    assert not sampled.exact and sampled.size == 3000

    def stat(mu):
        return levy_area(total_level2(mu.level1, mu.level2), 0, 1) ** 2

    target = float(np.sum(exact.weights * stat(exact)))
    s = stat(sampled)
    assert abs(s.mean() - target) < 4 * s.std() / np.sqrt(s.size)


def test_modified_moment_zero_and_linear():
    t = np.linspace(0, 1, 9)
    zero = RoughPathMeasure(t, [1.0], np.zeros((1, 8, 1, 1)), level1=np.zeros((1, 9, 1)))
    assert modified_moment(zero) == 0.0
    # X_t = t on [0, 2.5]: Hoelder terms T^(1-a) and T^(1-a)/sqrt(2); N_alpha = 4 at a = 0.45
    T, m, a = 2.5, 250, 0.45
    t = np.linspace(0, T, m + 1)
    l2 = np.full((1, m, 1, 1), 0.5 * (T / m) ** 2)
    lin = RoughPathMeasure(t, [1.0], l2, level1=t[None, :, None])
    expected = ((1 + 2 ** -0.5) * T ** (1 - a) + 4) ** 1.1
    assert modified_moment(lin, alpha=a, eps=0.1) == pytest.approx(expected, rel=1e-12)


def test_modified_moment_bounded_in_n():
    vals = [modified_moment(enhanced_k_layer(_ens(n, m=16, seed=6), 1)) for n in (16, 64, 256)]
    assert max(vals) / min(vals) < 1.5


@pytest.mark.parametrize("rough", [True, False])
def test_save_load_roundtrip(tmp_path, rough):
    ens = _ens(3, seed=7, dim=2)
    mu = enhanced_k_layer(ens, 2) if rough else empirical_from_ensemble(ens)
    save_measure(mu, tmp_path)
    back = load_measure(tmp_path)
    np.testing.assert_array_equal(back.weights, mu.weights)
    if rough:
        np.testing.assert_array_equal(back.level1, mu.level1)
        np.testing.assert_array_equal(back.level2, mu.level2)
        assert back.k == 2 and back.d == 2
    else:
        np.testing.assert_array_equal(back.paths, mu.paths)
        np.testing.assert_array_equal(back.times, mu.times)


def test_dirac_ensemble_enhanced_single_atom_start():
    ens = simulate_brownian_ensemble(dirac_law(1.5), 4, 1, 1.0, 4, seed=8)
    mu = enhanced_k_layer(ens, 2)
    np.testing.assert_array_equal(mu.level1[:, 0], 1.5)
