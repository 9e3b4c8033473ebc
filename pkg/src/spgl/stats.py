"""Batch statistics that linearize the curriculum subproblems.

From a batch of per-context return estimates these functions compute the
coefficients used by both closed-form update steps:

* ``u_bar``   -- value-weighted mean context offset; ``Sigma^-1 u_bar`` is the
  gradient of the importance-weighted value objective with respect to ``mu``.
* ``v_bar``   -- plain batch mean value (the performance-condition statistic).
* ``psi_bar`` -- gradient of the importance-weighted value objective with
  respect to the covariance scales ``theta``.
* ``h``       -- diagonal curvature of the step KL divergence in ``theta``
  (``1/theta^2`` for the diagonal family).
* ``omega``   -- gradient of the KL-to-target with respect to ``theta``.

The gradient definitions are normative: each is covered by a central
finite-difference test against the corresponding objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import ContextDistribution, TargetSpec

__all__ = [
    "ContextRollout",
    "CurriculumStats",
    "RolloutBatch",
    "Trajectory",
    "compute_geometry_stats",
    "compute_stats",
    "compute_value_stats",
]


@dataclass(frozen=True)
class Trajectory:
    """Per-step data of one episode, kept for policy improvement.

    Attributes:
        features: Policy input features per step, shape ``(T, F)``.
        actions: Executed actions per step, shape ``(T, A)``.
        rewards: Immediate rewards per step, shape ``(T,)``.
    """

    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray


@dataclass(frozen=True)
class ContextRollout:
    """One episode outcome under a fixed context.

    ``value_estimate`` is the discounted Monte Carlo return from the initial
    state, standing in for a learned value function.  ``trajectory`` is
    optional; curriculum updates never read it.
    """

    context: np.ndarray
    value_estimate: float
    episode_length: int
    success: bool
    trajectory: Trajectory | None = None

    def __post_init__(self):
        if not np.isfinite(self.value_estimate):
            raise ValueError("value_estimate must be finite")
        if self.episode_length < 0:
            raise ValueError("episode_length must be nonnegative")


@dataclass(frozen=True)
class RolloutBatch:
    """K rollouts plus a snapshot of the distribution that generated them."""

    rollouts: tuple[ContextRollout, ...]
    source_distribution: ContextDistribution

    def __post_init__(self):
        object.__setattr__(self, "rollouts", tuple(self.rollouts))
        if len(self.rollouts) < 2:
            raise ValueError("a rollout batch needs at least two rollouts")
        d = self.source_distribution.d
        for r in self.rollouts:
            if np.asarray(r.context).shape != (d,):
                raise ValueError("rollout context dimension mismatch")

    @property
    def k(self) -> int:
        return len(self.rollouts)

    def contexts(self) -> np.ndarray:
        """Stacked contexts, shape ``(K, d)``; fixed order."""
        return np.stack([np.asarray(r.context, dtype=float) for r in self.rollouts])

    def values(self) -> np.ndarray:
        """Return estimates, shape ``(K,)``; fixed order."""
        return np.array([r.value_estimate for r in self.rollouts], dtype=float)

    def success_rate(self) -> float:
        """Share of successful rollouts, in percent."""
        return 100.0 * sum(r.success for r in self.rollouts) / self.k


@dataclass(frozen=True)
class CurriculumStats:
    """Linearization coefficients of the two curriculum subproblems."""

    u_bar: np.ndarray
    v_bar: float
    psi_bar: np.ndarray
    h_diag: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("u_bar", "psi_bar", "h_diag", "omega"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.h_diag <= 0.0):
            raise ValueError("h_diag must be positive definite")

    @property
    def h_matrix(self) -> np.ndarray:
        """Curvature as a full (diagonal) matrix."""
        return np.diag(self.h_diag)


def _check_snapshot(batch: RolloutBatch, dist: ContextDistribution) -> None:
    src = batch.source_distribution
    if not (
        np.array_equal(src.mu, dist.mu)
        and np.array_equal(src.theta, dist.theta)
        and np.array_equal(src.target.sigma_tilde_diag, dist.target.sigma_tilde_diag)
    ):
        raise ValueError(
            "batch was generated by a different distribution; importance "
            "weights are only valid against the generating parameters"
        )


def compute_value_stats(
    batch: RolloutBatch,
    dist: ContextDistribution,
    standardize_values: bool = False,
) -> tuple[np.ndarray, float, np.ndarray]:
    """Value statistics ``(u_bar, v_bar, psi_bar)`` of a batch.

    ``v_bar`` is always the raw mean return (the performance threshold is in
    raw return units).  With ``standardize_values`` the values entering the
    gradient statistics ``u_bar``/``psi_bar`` are shifted and scaled to zero
    mean, unit variance; off by default.

    The batch summation order is fixed, so results are bit-reproducible.
    """
    _check_snapshot(batch, dist)
    contexts = batch.contexts()
    values = batch.values()
    v_bar = float(np.mean(values))

    grad_values = values
    if standardize_values:
        std = float(np.std(values))
        grad_values = (values - v_bar) / (std if std > 0.0 else 1.0)

    theta = dist.theta
    sigma = dist.target.sigma_tilde_diag
    delta = contexts - dist.mu
    u_bar = np.mean(grad_values[:, None] * delta, axis=0)
    psi_terms = delta**2 / (theta**2 * sigma) - 1.0 / theta
    psi_bar = 0.5 * np.mean(grad_values[:, None] * psi_terms, axis=0)
    return u_bar, v_bar, psi_bar


def compute_geometry_stats(
    dist: ContextDistribution, target: TargetSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Geometry statistics ``(h_diag, omega)`` at the current parameters.

    ``h_diag`` is ``1/theta^2``: the diagonal covariance family makes the
    curvature of the step KL in ``theta`` diagonal.  ``omega`` is the exact
    gradient of :func:`spgl.gaussian.kl_to_target` with respect to ``theta``.
    """
    if target.d != dist.d:
        raise ValueError("target dimension mismatch")
    theta = dist.theta
    sigma = target.sigma_tilde_diag
    delta = target.mu_tilde - dist.mu
    h_diag = 1.0 / theta**2
    omega = 0.5 * (1.0 / theta - 1.0 / theta**2 - delta**2 / (theta**2 * sigma))
    return h_diag, omega


def compute_stats(
    batch: RolloutBatch,
    dist: ContextDistribution,
    target: TargetSpec,
    standardize_values: bool = False,
) -> CurriculumStats:
    """All curriculum statistics for one update."""
    u_bar, v_bar, psi_bar = compute_value_stats(batch, dist, standardize_values)
    h_diag, omega = compute_geometry_stats(dist, target)
    return CurriculumStats(u_bar=u_bar, v_bar=v_bar, psi_bar=psi_bar, h_diag=h_diag, omega=omega)
