import numpy as np
import pytest

from roughchaos.lift import LiftConfig, map_F_k
from roughchaos.measures import PathMeasure, RoughPathMeasure, empirical_from_ensemble, enhanced_k_layer
from roughchaos.mckean_vlasov import brownian_flow
from roughchaos.particle import (constant_interaction, dirac_law, gaussian_law, linear_attraction,
                                 simulate_brownian_ensemble, tanh_attraction, zero_interaction)
from roughchaos.rates import (GirsanovMeasure, RateError, constant_drift_log_density,
                              drift_mismatch_entropy, functional_K_b_classical,
                              functional_K_b_enhanced, girsanov_log_density_rho_n, rate_I_k,
                              rate_J_b, rate_J_b_enhanced, relative_entropy_girsanov, rho_n_arrays)
from roughchaos.roughpath import RoughPathError


def _bm(n, m=16, seed=0, law=None, dim=1):
    return simulate_brownian_ensemble(law or gaussian_law(0, 1, dim), n, dim, 1.0, m, seed)


def _ito_log_density(b, paths, times):
    """Left-point Ito sums for the n-particle log-likelihood, written out directly."""
    n, M1, _ = paths.shape
    total = 0.0
    for j in range(M1 - 1):
        x = paths[:, j]
        g = np.mean(b(x[:, None], x[None, :]), axis=1)
        h = times[j + 1] - times[j]
        total += np.sum(g * (paths[:, j + 1] - x)) - 0.5 * np.sum(g * g) * h
    return total


def test_zero_interaction_everything_vanishes():
    Q = empirical_from_ensemble(_bm(6))
    k = functional_K_b_classical(Q, zero_interaction())
    assert (k.term1, k.term2, k.term3, k.k_prime) == (0.0, 0.0, 0.0, 0.0)
    g = GirsanovMeasure.from_flow(brownian_flow(gaussian_law(), 6, 1.0, 16, 0))
    rep = rate_J_b(g, zero_interaction())
    assert rep.entropy == 0.0 and rep.J == 0.0 and rep.J_drift_mismatch == 0.0


def test_constant_drift_entropy():
    q = GirsanovMeasure.constant_drift([0.6, -0.8], 10, 2, 2.0, 8, seed=1)
    assert relative_entropy_girsanov(q) == pytest.approx(0.5 * 1.0 * 2.0, rel=1e-14)


def test_entropy_initial_law_terms():
    flow = brownian_flow(gaussian_law(), 4, 1.0, 4, 0)
    with pytest.raises(RateError):
        relative_entropy_girsanov(GirsanovMeasure.from_flow(flow, initial_matches_reference=False))
    q = GirsanovMeasure.from_flow(flow, initial_log_ratio=np.full(4, 0.25))
    assert relative_entropy_girsanov(q) == 0.25
    with pytest.raises(RateError):
        GirsanovMeasure(flow.paths, flow.times, np.zeros((4, 3, 1)))
    with pytest.raises(RateError):
        GirsanovMeasure.from_flow(PathMeasure(flow.paths, flow.times))


def test_rho_n_constant_interaction_closed_form():
    ens = _bm(5, seed=2, dim=2)
    c = np.array([0.3, -1.1])
    rho = girsanov_log_density_rho_n(ens, constant_interaction(c, 2))
    closed = constant_drift_log_density(ens.paths[:, -1] - ens.paths[:, 0], c, 1.0)
    assert rho == pytest.approx(float(closed), abs=1e-12)


@pytest.mark.parametrize("b", [linear_attraction(0.5), tanh_attraction(1.3)])
def test_rho_n_matches_ito_likelihood(b):
    # the Stratonovich form with its divergence corrections is the Ito likelihood
    ens = _bm(3, m=8192, seed=3)
    strat = girsanov_log_density_rho_n(ens, b)
    ito = _ito_log_density(b, ens.paths, ens.times)
    assert abs(strat - ito) < 0.03


@pytest.mark.parametrize("b", [linear_attraction(0.5), tanh_attraction(1.3, 2)])
def test_rho_n_is_n_K_plus_K_prime(b):
    ens = _bm(7, seed=4, dim=b.dim)
    k = functional_K_b_classical(empirical_from_ensemble(ens), b)
    assert girsanov_log_density_rho_n(ens, b) == pytest.approx(7 * k.value + k.k_prime, abs=1e-12)


def test_rho_n_batched_over_replicas():
    b = tanh_attraction(0.8)
    a, c = _bm(4, seed=5), _bm(4, seed=6)
    batch = rho_n_arrays(b, np.stack([a.paths, c.paths]), a.times)
    assert batch[0] == pytest.approx(girsanov_log_density_rho_n(a, b), abs=1e-13)
    assert batch[1] == pytest.approx(girsanov_log_density_rho_n(c, b), abs=1e-13)


@pytest.mark.parametrize("factor", [1, 4])
def test_classical_equals_enhanced(factor):
    b = tanh_attraction(0.9, 2)
    ens = _bm(5, m=32, seed=7, dim=2)
    cfg = None if factor == 1 else LiftConfig(8, 4)
    classical = functional_K_b_classical(empirical_from_ensemble(ens), b, cfg, chunk=2)
    enhanced = functional_K_b_enhanced(enhanced_k_layer(ens, 2, cfg=cfg), b)
    for name in ("term1", "term2", "term3", "k_prime"):
        assert getattr(classical, name) == pytest.approx(getattr(enhanced, name), abs=1e-12)


def test_K_dimension_errors():
    ens = _bm(3)
    with pytest.raises(RoughPathError):
        functional_K_b_enhanced(enhanced_k_layer(ens, 3), tanh_attraction(1.0))
    with pytest.raises(RoughPathError):
        functional_K_b_classical(empirical_from_ensemble(ens), tanh_attraction(1.0, 2))
    with pytest.raises(RoughPathError):
        functional_K_b_classical(empirical_from_ensemble(ens), tanh_attraction(1.0),
                                 LiftConfig(3, 5))


def test_constant_b_on_wiener():
    c = 0.7
    ens = _bm(50, seed=8, law=dirac_law(0.0))
    k = functional_K_b_classical(empirical_from_ensemble(ens), constant_interaction(c))
    assert k.term1 == pytest.approx(c * np.mean(ens.paths[:, -1, 0]), abs=1e-12)
    assert k.term2 == 0.0 and k.k_prime == 0.0
    assert k.term3 == pytest.approx(-0.5 * c * c, rel=1e-12)


def test_constant_drift_J_family():
    theta, c, T, N = 1.0, 0.25, 1.0, 4000
    q = GirsanovMeasure.constant_drift(theta, N, 1, T, 16, seed=9)
    rep = rate_J_b(q, constant_interaction(c))
    expected = 0.5 * (theta - c) ** 2 * T
    assert rep.J_drift_mismatch == pytest.approx(expected, rel=1e-12)
    # J differs from the mismatch form only through c * (mean displacement - theta T)
    assert abs(rep.J - expected) < 4 * c / np.sqrt(N)


def test_K_prime_bounded_by_divergence():
    theta = 1.7
    ens = _bm(6, seed=10)
    k = functional_K_b_classical(empirical_from_ensemble(ens), tanh_attraction(theta))
    assert abs(k.k_prime) <= 0.5 * 1.0 * theta + 1e-12


def test_entropy_nonnegative():
    rng = np.random.default_rng(11)
    flow = brownian_flow(gaussian_law(), 10, 1.0, 8, 0)
    q = GirsanovMeasure(flow.paths, flow.times, rng.normal(size=(10, 8, 1)))
    assert relative_entropy_girsanov(q) >= 0
    assert drift_mismatch_entropy(q, tanh_attraction(1.0)) >= 0


def test_rate_I_k_on_lifted_measures():
    ens = _bm(4, m=8, seed=12)
    Q = empirical_from_ensemble(ens)
    mu = map_F_k(Q, 2)
    q = GirsanovMeasure(ens.paths, ens.times, np.zeros((4, 8, 1)))
    v = rate_I_k(mu, girsanov=q)
    assert v.status == "finite" and v.value == 0.0
    assert rate_I_k(mu).status == "unrepresentable"
    bad_l2 = mu.level2.copy()
    bad_l2[5, 3, 0, 1] += 0.5
    bad_l2[5, 3, 1, 0] -= 0.5  # area shift keeps symmetric part
    bad = RoughPathMeasure(mu.times, mu.weights, bad_l2, level1=mu.level1, k=2, d=1)
    v = rate_I_k(bad, girsanov=q)
    assert v.is_infinite and v.worst_atom == 5 and "atom 5" in v.detail


def test_rate_I_k_rejects_non_product_weights():
    ens = _bm(3, m=8, seed=13)
    mu = map_F_k(empirical_from_ensemble(ens), 2)
    w = mu.weights.copy()
    w[0] += 0.05
    w[1] -= 0.05
    bad = RoughPathMeasure(mu.times, w, mu.level2, level1=mu.level1, k=2, d=1)
    assert rate_I_k(bad).is_infinite


def test_enhanced_J_equals_classical_J():
    b = linear_attraction(0.5)
    flow = brownian_flow(gaussian_law(), 6, 1.0, 8, 14)
    rng = np.random.default_rng(14)
    q = GirsanovMeasure(flow.paths, flow.times, rng.normal(size=(6, 8, 1)) * 0.3)
    classical = rate_J_b(q, b, with_mismatch=False)
    for k in (2, 3):
        v = rate_J_b_enhanced(map_F_k(q.measure(), k), b, q)
        assert v.status == "finite"
        assert v.value == pytest.approx(classical.J, abs=1e-12)
    report = rate_J_b(q, b)
    assert '"J"' in report.to_json()
