"""Batch-statistic tests.  The gradient statistics are normative: each one is
checked with central finite differences against the objective it linearizes
(importance-weighted batch value for u_bar/psi_bar, KL-to-target for omega,
step KL for the curvature h)."""

import numpy as np
import pytest

from spgl.gaussian import ContextDistribution, TargetSpec, importance_ratio, kl_between, kl_to_target
from spgl.stats import (
    ContextRollout,
    RolloutBatch,
    compute_geometry_stats,
    compute_stats,
    compute_value_stats,
)

FD_STEP = 1e-5
FD_RTOL = 1e-4


def make_dist(mu, theta, mu_tilde=None, sigma=None):
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = mu.size
    target = TargetSpec(
        mu_tilde=np.zeros(d) if mu_tilde is None else np.atleast_1d(mu_tilde),
        sigma_tilde_diag=np.ones(d) if sigma is None else np.atleast_1d(sigma),
    )
    return ContextDistribution(mu=mu, theta=theta, target=target)


def make_batch(dist, contexts, values, successes=None):
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    rollouts = tuple(
        ContextRollout(
            context=c,
            value_estimate=float(v),
            episode_length=1,
            success=bool(successes[i]) if successes is not None else False,
        )
        for i, (c, v) in enumerate(zip(contexts, values))
    )
    return RolloutBatch(rollouts=rollouts, source_distribution=dist)


def random_instance(rng, d):
    sigma = rng.uniform(0.2, 2.0, d)
    mu_tilde = rng.normal(0.0, 1.0, d)
    theta = rng.uniform(0.3, 3.0, d)
    mu = mu_tilde + rng.normal(0.0, 1.0, d)
    dist = make_dist(mu, theta, mu_tilde=mu_tilde, sigma=sigma)
    contexts = np.random.default_rng(rng.integers(2**32)).normal(
        dist.mu, np.sqrt(dist.covariance_diag()), size=(16, d)
    )
    values = rng.normal(1.0, 2.0, 16)
    return dist, make_batch(dist, contexts, values)


def sampled_objective(batch, dist, mu=None, theta=None):
    """The importance-weighted batch value as a function of the candidate
    parameters; the quantity u_bar and psi_bar linearize."""
    candidate = dist.with_params(mu=mu, theta=theta)
    ratios = importance_ratio(candidate, dist, batch.contexts())
    return float(np.mean(batch.values() * ratios))


class TestValueStats:
    def test_hand_example(self):
        dist = make_dist([0.0], [1.0])
        batch = make_batch(dist, [[1.0], [-1.0]], [2.0, 1.0])
        u_bar, v_bar, _ = compute_value_stats(batch, dist)
        assert u_bar[0] == pytest.approx(0.5)
        assert v_bar == pytest.approx(1.5)

    def test_symmetric_contexts_cancel(self):
        dist = make_dist([0.5, -1.0], [1.0, 2.0])
        offsets = np.array([[0.3, -0.7], [-0.3, 0.7]])
        batch = make_batch(dist, dist.mu + offsets, [2.0, 2.0])
        u_bar, _, _ = compute_value_stats(batch, dist)
        assert np.allclose(u_bar, 0.0, atol=1e-15)

    def test_psi_bar_single_context_value(self):
        # duplicated context keeps the batch size valid without changing the
        # mean statistics
        dist = make_dist([0.0], [1.0])
        batch = make_batch(dist, [[0.0], [0.0]], [1.0, 1.0])
        _, _, psi_bar = compute_value_stats(batch, dist)
        assert psi_bar[0] == pytest.approx(-0.5)

    def test_snapshot_mismatch_rejected(self):
        dist = make_dist([0.0], [1.0])
        batch = make_batch(dist, [[0.1], [0.2]], [1.0, 2.0])
        other = dist.with_params(mu=np.array([0.5]))
        with pytest.raises(ValueError):
            compute_value_stats(batch, other)

    def test_standardize_flag_keeps_v_bar_raw(self):
        dist = make_dist([0.0], [1.0])
        batch = make_batch(dist, [[1.0], [-1.0]], [2.0, 1.0])
        u_raw, v_raw, _ = compute_value_stats(batch, dist)
        u_std, v_std, _ = compute_value_stats(batch, dist, standardize_values=True)
        assert v_std == v_raw
        assert not np.allclose(u_std, u_raw)

    def test_bit_reproducible(self):
        rng = np.random.default_rng(11)
        dist, batch = random_instance(rng, 3)
        first = compute_value_stats(batch, dist)
        second = compute_value_stats(batch, dist)
        for a, b in zip(first, second):
            assert np.array_equal(a, b)

    def test_batch_requires_two_rollouts(self):
        dist = make_dist([0.0], [1.0])
        with pytest.raises(ValueError):
            make_batch(dist, [[0.0]], [1.0])


class TestGeometryStats:
    def test_unit_curvature(self):
        dist = make_dist([0.0], [1.0], sigma=[0.37])
        h_diag, _ = compute_geometry_stats(dist, dist.target)
        assert h_diag[0] == pytest.approx(1.0)

    def test_omega_zero_at_target(self):
        target = TargetSpec(mu_tilde=np.array([1.0, -2.0]), sigma_tilde_diag=np.array([0.5, 2.0]))
        dist = ContextDistribution.at_target(target)
        _, omega = compute_geometry_stats(dist, target)
        assert np.allclose(omega, 0.0, atol=1e-15)

    def test_omega_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            dist, _ = random_instance(rng, 2)
            _, omega = compute_geometry_stats(dist, dist.target)
            fd = np.zeros(dist.d)
            for j in range(dist.d):
                bump = np.zeros(dist.d)
                bump[j] = FD_STEP
                up = kl_to_target(dist.with_params(theta=dist.theta + bump))
                down = kl_to_target(dist.with_params(theta=dist.theta - bump))
                fd[j] = (up - down) / (2 * FD_STEP)
            assert np.linalg.norm(omega - fd) <= FD_RTOL * max(np.linalg.norm(fd), 1e-8)


class TestGradientConsistency:
    def test_u_bar_is_mean_gradient(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            dist, batch = random_instance(rng, 3)
            u_bar, _, _ = compute_value_stats(batch, dist)
            precision = 1.0 / dist.covariance_diag()
            analytic = precision * u_bar
            fd = np.zeros(dist.d)
            for j in range(dist.d):
                bump = np.zeros(dist.d)
                bump[j] = FD_STEP
                up = sampled_objective(batch, dist, mu=dist.mu + bump)
                down = sampled_objective(batch, dist, mu=dist.mu - bump)
                fd[j] = (up - down) / (2 * FD_STEP)
            assert np.linalg.norm(analytic - fd) <= FD_RTOL * max(np.linalg.norm(fd), 1e-8)

    def test_psi_bar_is_scale_gradient(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            dist, batch = random_instance(rng, 3)
            _, _, psi_bar = compute_value_stats(batch, dist)
            fd = np.zeros(dist.d)
            for j in range(dist.d):
                bump = np.zeros(dist.d)
                bump[j] = FD_STEP
                up = sampled_objective(batch, dist, theta=dist.theta + bump)
                down = sampled_objective(batch, dist, theta=dist.theta - bump)
                fd[j] = (up - down) / (2 * FD_STEP)
            assert np.linalg.norm(psi_bar - fd) <= FD_RTOL * max(np.linalg.norm(fd), 1e-8)

    def test_h_matches_step_kl_to_second_order(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            dist, _ = random_instance(rng, 3)
            h_diag, _ = compute_geometry_stats(dist, dist.target)
            direction = rng.normal(size=dist.d)
            direction /= np.linalg.norm(direction)
            for norm in (1e-2, 1e-3):
                delta = norm * direction
                model = 0.25 * float(np.sum(delta**2 * h_diag))
                actual = kl_between(dist.with_params(theta=dist.theta + delta), dist)
                assert abs(model - actual) <= 10.0 * norm * max(actual, 1e-12)

    def test_stats_bundle_matches_parts(self):
        rng = np.random.default_rng(16)
        dist, batch = random_instance(rng, 2)
        stats = compute_stats(batch, dist, dist.target)
        u_bar, v_bar, psi_bar = compute_value_stats(batch, dist)
        h_diag, omega = compute_geometry_stats(dist, dist.target)
        assert np.array_equal(stats.u_bar, u_bar)
        assert stats.v_bar == v_bar
        assert np.array_equal(stats.psi_bar, psi_bar)
        assert np.array_equal(stats.h_diag, h_diag)
        assert np.array_equal(stats.omega, omega)
        assert np.array_equal(stats.h_matrix, np.diag(h_diag))
