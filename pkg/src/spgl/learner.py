"""Minimal episodic policy-gradient learner.

A linear-Gaussian policy over polynomial features of the observation stands
in for a deep RL learner at desk scale: enough capacity for the point-mass
task, no extra dependencies, and fully deterministic given seeds.  One
likelihood-ratio gradient step with a mean-return baseline is applied per
batch; value estimates are plain discounted Monte Carlo returns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .stats import ContextRollout, Trajectory

__all__ = [
    "LearnerConfig",
    "PolicyParameters",
    "collect_rollouts",
    "feature_dim",
    "improve",
    "init_policy",
    "load_policy",
    "policy_features",
    "policy_log_prob",
    "rollout",
    "save_policy",
]

NOISE_MIN = 1e-3
GRAD_CLIP = 10.0


@dataclass(frozen=True)
class LearnerConfig:
    """Learner hyper-parameters."""

    gamma: float = 0.99
    learning_rate: float = 0.05
    iterations_per_update: int = 1
    context_visible: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.iterations_per_update < 1:
            raise ValueError("iterations_per_update must be >= 1")


@dataclass(frozen=True)
class PolicyParameters:
    """Linear-Gaussian policy: action mean = weights @ features."""

    weights: np.ndarray
    log_action_noise: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        noise = np.maximum(np.asarray(self.log_action_noise, dtype=float), np.log(NOISE_MIN))
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(noise))):
            raise ValueError("policy parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_action_noise", noise)

    @property
    def action_noise(self) -> np.ndarray:
        return np.exp(self.log_action_noise)


def feature_dim(observation_dim: int) -> int:
    """Number of polynomial features of degree <= 2."""
    return 1 + observation_dim + observation_dim * (observation_dim + 1) // 2


def policy_features(observations: np.ndarray) -> np.ndarray:
    """Degree-<=2 polynomial features: constant, linear and pairwise terms.

    Accepts ``(n,)`` or ``(k, n)`` observations; returns ``(F,)`` or ``(k, F)``.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    k, n = obs.shape
    iu, ju = np.triu_indices(n)
    feats = np.concatenate(
        [np.ones((k, 1)), obs, obs[:, iu] * obs[:, ju]], axis=1
    )
    if np.ndim(observations) == 1:
        return feats[0]
    return feats


def init_policy(observation_dim: int, action_dim: int = 2, noise: float = 0.8) -> PolicyParameters:
    """Zero-mean policy with isotropic exploration noise."""
    return PolicyParameters(
        weights=np.zeros((action_dim, feature_dim(observation_dim))),
        log_action_noise=np.full(action_dim, np.log(noise)),
    )


def policy_log_prob(policy: PolicyParameters, features: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-step log densities of the executed actions."""
    mean = features @ policy.weights.T
    var = policy.action_noise**2
    quad = np.sum((actions - mean) ** 2 / var, axis=-1)
    return -0.5 * quad - 0.5 * np.sum(np.log(2.0 * np.pi * var))


def _rollout_rng(master_seed: int, iteration: int, index: int) -> np.random.Generator:
    """Per-rollout generator, stable under any execution order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(iteration), int(index)]))


def rollout(policy, env, context, rng, config: LearnerConfig) -> ContextRollout:
    """One full episode under a fixed context.

    The value estimate is the discounted Monte Carlo return.  Environments
    whose return does not depend on actions short-circuit to their analytic
    value with an empty trajectory.
    """
    context = np.asarray(context, dtype=float)
    if getattr(env, "action_independent", False):
        value = float(env.value(context))
        return ContextRollout(
            context=context,
            value_estimate=value,
            episode_length=1,
            success=value >= env.success_threshold,
            trajectory=None,
        )

    state = env.reset(context, rng)
    noise_std = policy.action_noise
    features_seq, actions_seq, rewards_seq = [], [], []
    value = 0.0
    discount = 1.0
    success = False
    for _ in range(env.horizon):
        feats = policy_features(env.observe(state, context))
        action = feats @ policy.weights.T + noise_std * rng.standard_normal(env.action_dim)
        outcome = env.step(state, action, context)
        features_seq.append(feats)
        actions_seq.append(action)
        rewards_seq.append(outcome.reward)
        value += discount * outcome.reward
        discount *= config.gamma
        state = outcome.state
        if outcome.terminated:
            success = outcome.success
            break
    return ContextRollout(
        context=context,
        value_estimate=value,
        episode_length=len(rewards_seq),
        success=success,
        trajectory=Trajectory(
            features=np.array(features_seq),
            actions=np.array(actions_seq),
            rewards=np.array(rewards_seq),
        ),
    )


def collect_rollouts(
    policy,
    env,
    contexts: np.ndarray,
    config: LearnerConfig,
    master_seed: int,
    iteration: int,
    deterministic: bool = False,
) -> list[ContextRollout]:
    """One episode per context, vectorized across the batch.

    Per-rollout noise comes from generators derived from
    ``(master_seed, iteration, index)``, so results do not depend on batch
    size or execution order and match :func:`rollout` run with the same
    derived generator.  With ``deterministic`` the mean action is executed
    (evaluation mode).
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    k = contexts.shape[0]
    if getattr(env, "action_independent", False):
        return [
            rollout(policy, env, contexts[i], _rollout_rng(master_seed, iteration, i), config)
            for i in range(k)
        ]

    # dynamics run on clamped contexts; the rollouts keep the raw draws, which
    # is what curriculum importance weights are defined against
    raw_contexts = contexts
    contexts = env.clamp_contexts(contexts, warn=False)
    horizon = env.horizon
    action_dim = env.action_dim
    if deterministic:
        noise = np.zeros((k, horizon, action_dim))
        noise_std = np.zeros(action_dim)
    else:
        noise = np.stack(
            [
                _rollout_rng(master_seed, iteration, i).standard_normal((horizon, action_dim))
                for i in range(k)
            ]
        )
        noise_std = policy.action_noise

    positions = np.tile(np.array(env.params.start, dtype=float), (k, 1))
    velocities = np.zeros((k, 2))
    alive = np.ones(k, dtype=bool)
    values = np.zeros(k)
    discount = 1.0
    lengths = np.zeros(k, dtype=int)
    successes = np.zeros(k, dtype=bool)
    feats_hist = np.zeros((k, horizon, feature_dim(env.observation_dim)))
    actions_hist = np.zeros((k, horizon, action_dim))
    rewards_hist = np.zeros((k, horizon))

    for t in range(horizon):
        if not np.any(alive):
            break
        feats = policy_features(env.observe_arrays(positions, velocities, contexts))
        actions = feats @ policy.weights.T + noise_std * noise[:, t, :]
        t_arr = np.full(k, t)
        new_pos, new_vel, rewards, terminated, success = env._step_arrays(
            positions.copy(), velocities.copy(), actions, contexts, t_arr
        )
        positions = np.where(alive[:, None], new_pos, positions)
        velocities = np.where(alive[:, None], new_vel, velocities)
        values += np.where(alive, discount * rewards, 0.0)
        feats_hist[alive, t] = feats[alive]
        actions_hist[alive, t] = actions[alive]
        rewards_hist[alive, t] = rewards[alive]
        lengths += alive.astype(int)
        successes |= alive & success
        alive &= ~terminated
        discount *= config.gamma

    rollouts = []
    for i in range(k):
        n = lengths[i]
        rollouts.append(
            ContextRollout(
                context=raw_contexts[i],
                value_estimate=float(values[i]),
                episode_length=int(n),
                success=bool(successes[i]),
                trajectory=Trajectory(
                    features=feats_hist[i, :n].copy(),
                    actions=actions_hist[i, :n].copy(),
                    rewards=rewards_hist[i, :n].copy(),
                ),
            )
        )
    return rollouts


def improve(policy: PolicyParameters, batch, config: LearnerConfig) -> PolicyParameters:
    """One likelihood-ratio policy-gradient step with a mean-return baseline.

    Exploration noise is held fixed; only the mean weights move.  Rollouts
    without trajectories (analytic environments) contribute no gradient, and
    a non-finite gradient skips the step with a warning.
    """
    rollouts = batch.rollouts if hasattr(batch, "rollouts") else tuple(batch)
    with_traj = [r for r in rollouts if r.trajectory is not None and r.episode_length > 0]
    if not with_traj:
        return policy

    returns = np.array([r.value_estimate for r in rollouts])
    baseline = float(np.mean(returns))
    var = policy.action_noise**2

    new_policy = policy
    for _ in range(config.iterations_per_update):
        grad = np.zeros_like(new_policy.weights)
        for r in with_traj:
            adv = r.value_estimate - baseline
            traj = r.trajectory
            mean = traj.features @ new_policy.weights.T
            score = (traj.actions - mean) / var
            grad += adv * score.T @ traj.features
        grad /= len(rollouts)
        if not np.all(np.isfinite(grad)):
            warnings.warn("non-finite policy gradient; step skipped", RuntimeWarning)
            return new_policy
        norm = float(np.linalg.norm(grad))
        if norm > GRAD_CLIP:
            grad *= GRAD_CLIP / norm
        new_policy = replace(new_policy, weights=new_policy.weights + config.learning_rate * grad)
    return new_policy


def save_policy(policy: PolicyParameters, path) -> None:
    np.savez(path, weights=policy.weights, log_action_noise=policy.log_action_noise)


def load_policy(path) -> PolicyParameters:
    data = np.load(path)
    return PolicyParameters(weights=data["weights"], log_action_noise=data["log_action_noise"])
