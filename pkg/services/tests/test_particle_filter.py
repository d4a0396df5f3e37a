"""
Tests for the per-human particle filter
"""

import numpy as np
import pytest

from agents.particle_filter import (ParticleFilter, ParticleSet, PfConfig, effective_sample_size, pf_estimate,
                                    pf_init, pf_measure, pf_propagate, pf_resample, systematic_indices)
from utils.errors import DegenerateWeights, NonMonotonicFrame


def particle_set(particles, weights=None, seed: int = 0) -> ParticleSet:
    particles = np.asarray(particles, dtype=np.float64)
    n = len(particles)
    weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    return ParticleSet(particles=particles, weights=weights, rng_seed=seed)


def test_init_collapses_for_tiny_sigma():
    s = pf_init((12.0, -4.0), PfConfig(sigma_z=1e-12), seed=1)
    np.testing.assert_allclose(s.particles, np.tile([12.0, -4.0], (100, 1)), atol=1e-9)
    np.testing.assert_allclose(s.weights, 0.01)


def test_init_mean_within_clt_bound():
    cfg = PfConfig()
    for seed in range(20):
        s = pf_init((5.0, 7.0), cfg, seed)
        assert np.all(np.abs(s.particles.mean(axis=0) - [5.0, 7.0]) < 4 * cfg.sigma_z / np.sqrt(cfg.n))


def test_init_is_seeded():
    a, b = pf_init((0, 0), PfConfig(), seed=42), pf_init((0, 0), PfConfig(), seed=42)
    np.testing.assert_array_equal(a.particles, b.particles)
    assert not np.array_equal(a.particles, pf_init((0, 0), PfConfig(), seed=43).particles)


def test_init_streams_are_independent():
    a = pf_init((0, 0), PfConfig(), seed=42, stream=1)
    b = pf_init((0, 0), PfConfig(), seed=42, stream=2)
    assert not np.array_equal(a.particles, b.particles)


@pytest.mark.parametrize("v_max, dt", [(0.0, 1.0), (1.2, 0.0)])
def test_propagate_without_motion(v_max, dt):
    s = pf_init((0, 0), PfConfig(), seed=3)
    np.testing.assert_array_equal(pf_propagate(s, dt, PfConfig(v_max=v_max)).particles, s.particles)


def test_propagate_bounded_by_max_speed():
    cfg = PfConfig(n=1000, v_max=1.2)
    s = pf_init((0, 0), cfg, seed=4)
    for _ in range(100):
        moved = pf_propagate(s, 0.25, cfg)
        assert np.all(np.abs(moved.particles - s.particles) <= cfg.v_max * 0.25 + 1e-12)
        s = moved


def test_propagate_rejects_negative_dt():
    with pytest.raises(ValueError):
        pf_propagate(pf_init((0, 0), PfConfig(), seed=0), -0.1, PfConfig())


def test_measure_at_common_position_is_uniform():
    s = pf_measure(particle_set(np.zeros((10, 2))), (0.0, 0.0), PfConfig())
    np.testing.assert_allclose(s.weights, 0.1)


def test_measure_weight_ratio_at_one_sigma():
    cfg = PfConfig(sigma_z=3.0)
    s = pf_measure(particle_set([[0.0, 0.0], [3.0, 0.0]]), (0.0, 0.0), cfg)
    assert s.weights[0] / s.weights[1] == pytest.approx(np.exp(0.5))
    assert s.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_measure_far_away_is_degenerate():
    with pytest.raises(DegenerateWeights):
        pf_measure(particle_set(np.zeros((5, 2))), (300.0, 0.0), PfConfig(sigma_z=3.0))


def test_weights_normalized_after_every_measurement():
    cfg = PfConfig()
    rng = np.random.default_rng(5)
    s = pf_init((0, 0), cfg, seed=5)
    for _ in range(200):
        s = pf_measure(pf_propagate(s, 0.25, cfg), rng.normal(0, 3, size=2), cfg)
        assert abs(s.weights.sum() - 1.0) < 1e-9
        s = pf_resample(s)


def test_resample_uniform_weights_keeps_every_particle():
    for seed in range(10):
        s = pf_resample(particle_set(np.column_stack([np.arange(50.0), np.zeros(50)]), seed=seed))
        assert sorted(s.particles[:, 0]) == list(np.arange(50.0))
        np.testing.assert_allclose(s.weights, 1 / 50)


def test_resample_one_hot_weights():
    weights = np.zeros(8)
    weights[2] = 1.0
    s = pf_resample(particle_set(np.column_stack([np.arange(8.0), np.zeros(8)]), weights))
    assert np.all(s.particles[:, 0] == 2.0)


def test_systematic_copy_counts_bounded():
    rng = np.random.default_rng(6)
    for _ in range(10_000):
        n = int(rng.integers(2, 40))
        weights = rng.dirichlet(np.ones(n))
        counts = np.bincount(systematic_indices(weights, rng.uniform(0, 1.0 / n)), minlength=n)
        assert counts.sum() == n
        assert np.all(counts >= np.floor(n * weights))
        assert np.all(counts <= np.ceil(n * weights))


def test_resampling_preserves_mean_in_expectation():
    rng = np.random.default_rng(7)
    particles = rng.normal(0, 3, size=(100, 2))
    s = particle_set(particles, rng.dirichlet(np.ones(100)))
    target = s.weights @ particles
    spread = np.sqrt(np.diag(pf_estimate(s).covariance))
    means = np.array([pf_resample(s.model_copy(update={"rng_seed": k})).particles.mean(axis=0)
                      for k in range(10_000)])
    assert np.all(np.abs(means.mean(axis=0) - target) < 0.05 * spread)


def test_estimate_of_identical_particles():
    estimate = pf_estimate(particle_set(np.tile([4.0, 2.0], (6, 1))))
    assert estimate.mean == pytest.approx((4.0, 2.0), abs=1e-12)
    np.testing.assert_allclose(estimate.covariance, np.zeros((2, 2)), atol=1e-24)


def test_estimate_of_two_particles():
    assert pf_estimate(particle_set([[0.0, 0.0], [2.0, 0.0]])).mean == (1.0, 0.0)


def test_estimate_matches_brute_force():
    rng = np.random.default_rng(8)
    particles = rng.normal(10, 5, size=(50, 2))
    weights = rng.dirichlet(np.ones(50))
    estimate = pf_estimate(particle_set(particles, weights))
    mean = np.zeros(2)
    for w, p in zip(weights, particles):
        mean += w * p
    cov = np.zeros((2, 2))
    for w, p in zip(weights, particles):
        cov += w * np.outer(p - mean, p - mean)
    np.testing.assert_allclose(estimate.mean, mean, atol=1e-12)
    np.testing.assert_allclose(estimate.covariance, cov, atol=1e-12)


def test_effective_sample_size():
    assert effective_sample_size(particle_set(np.zeros((20, 2)))) == pytest.approx(20.0)
    weights = np.zeros(20)
    weights[0] = 1.0
    assert effective_sample_size(particle_set(np.zeros((20, 2)), weights)) == pytest.approx(1.0)


def run_stationary(seed: int, steps: int = 100, rate_hz: float = 20.0):
    truth = np.array([350.0, -120.0])
    noise = np.random.default_rng(10_000 + seed)
    pf = ParticleFilter(PfConfig(), seed=seed, record_history=True)
    for k in range(steps):
        pf.update(truth + noise.normal(0, 3.0, size=2), k / rate_hz)
    return pf, truth


def test_stationary_target_converges():
    errors = []
    for seed in range(200):
        pf, truth = run_stationary(seed)
        errors.append(np.linalg.norm(np.asarray(pf.estimate().mean) - truth))
    assert np.mean(np.asarray(errors) < 1.5) >= 0.95


def test_filter_is_bit_reproducible():
    a, _ = run_stationary(3, steps=30)
    b, _ = run_stationary(3, steps=30)
    for (_, _, sa), (_, _, sb) in zip(a.history, b.history):
        np.testing.assert_array_equal(sa.particles, sb.particles)
        np.testing.assert_array_equal(sa.weights, sb.weights)


def test_ess_threshold_skips_resampling():
    default = ParticleFilter(PfConfig(), seed=1)
    lazy = ParticleFilter(PfConfig(ess_threshold=0.01), seed=1)
    for pf in (default, lazy):
        pf.update((0.0, 0.0), 0.0)
        pf.update((1.0, 1.0), 0.25)
    np.testing.assert_allclose(default.state.weights, 0.01)
    assert not np.allclose(lazy.state.weights, 0.01)


def test_divergent_measurement_reinitializes():
    pf = ParticleFilter(PfConfig(), seed=2)
    pf.update((0.0, 0.0), 0.0)
    pf.update((5000.0, 0.0), 0.25)
    assert np.all(np.abs(np.asarray(pf.estimate().mean) - [5000.0, 0.0]) < 4 * 3.0 / np.sqrt(100))


def test_time_must_not_go_backwards():
    pf = ParticleFilter(PfConfig(), seed=0)
    pf.update((0.0, 0.0), 1.0)
    with pytest.raises(NonMonotonicFrame):
        pf.update((0.0, 0.0), 0.5)
