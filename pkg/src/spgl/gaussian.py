"""Gaussian context distributions with a scaled-covariance parameterization.

The sampling distribution over contexts is a multivariate normal whose
covariance is tied to a fixed target distribution: the target is
``N(mu_tilde, diag(sigma_tilde))`` and the sampling distribution is
``N(mu, diag(theta) * diag(sigma_tilde))``, i.e. ``theta`` scales the target
variances per dimension.  At ``mu == mu_tilde`` and ``theta == 1`` the two
distributions coincide.

All covariances here are diagonal, which keeps every density, importance
ratio and KL divergence in closed form as simple vector expressions.
Distributions are immutable after construction and safe to share across
threads; sampling takes an explicit seeded generator owned by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "THETA_MIN",
    "ContextDistribution",
    "ContextSample",
    "TargetSpec",
    "importance_ratio",
    "kl_between",
    "kl_to_target",
    "log_density",
    "mean_shift_kl",
    "sample",
]

# Scale floor for the covariance multipliers.  Values below this are rejected
# at construction so precision matrices stay finite and well conditioned.
THETA_MIN = 1e-6

# Importance ratios are clamped to this range before use; with very narrow
# target variances the raw ratio overflows double precision.
_LOG_RATIO_LIMIT = np.log(1e30)

# A context sample is a plain float vector of length d.
ContextSample = np.ndarray


def _as_readonly_vector(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-d vector with at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TargetSpec:
    """Target context distribution: mean and diagonal covariance.

    Attributes:
        mu_tilde: Target mean, shape ``(d,)``.
        sigma_tilde_diag: Target variances per dimension, shape ``(d,)``,
            strictly positive.
    """

    mu_tilde: np.ndarray
    sigma_tilde_diag: np.ndarray

    def __post_init__(self):
        mu = _as_readonly_vector(self.mu_tilde, "mu_tilde")
        sigma = _as_readonly_vector(self.sigma_tilde_diag, "sigma_tilde_diag")
        if sigma.shape != mu.shape:
            raise ValueError("mu_tilde and sigma_tilde_diag must have the same length")
        if np.any(sigma <= 0.0):
            raise ValueError("sigma_tilde_diag entries must be strictly positive")
        object.__setattr__(self, "mu_tilde", mu)
        object.__setattr__(self, "sigma_tilde_diag", sigma)

    @property
    def d(self) -> int:
        return self.mu_tilde.size


@dataclass(frozen=True)
class ContextDistribution:
    """Sampling distribution ``N(mu, diag(theta * sigma_tilde))``.

    ``theta`` is the per-dimension variance multiplier relative to the target
    covariance.  Entries must stay at or above :data:`THETA_MIN`.

    Attributes:
        mu: Mean, shape ``(d,)``.
        theta: Positive covariance scales, shape ``(d,)``.
        target: The target spec fixing the base variances.
    """

    mu: np.ndarray
    theta: np.ndarray
    target: TargetSpec

    def __post_init__(self):
        mu = _as_readonly_vector(self.mu, "mu")
        theta = _as_readonly_vector(self.theta, "theta")
        if mu.shape != (self.target.d,) or theta.shape != (self.target.d,):
            raise ValueError("mu and theta must match the target dimension")
        if np.any(theta < THETA_MIN):
            raise ValueError(f"theta entries must be >= {THETA_MIN}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def at_target(cls, target: TargetSpec) -> "ContextDistribution":
        """The member of the family equal to the target distribution."""
        return cls(mu=target.mu_tilde, theta=np.ones(target.d), target=target)

    @property
    def d(self) -> int:
        return self.target.d

    def covariance_diag(self) -> np.ndarray:
        """Diagonal of the covariance matrix, ``theta * sigma_tilde``."""
        return self.theta * self.target.sigma_tilde_diag

    def with_params(self, mu=None, theta=None) -> "ContextDistribution":
        """Copy with updated parameters, sharing the target."""
        return replace(
            self,
            mu=self.mu if mu is None else mu,
            theta=self.theta if theta is None else theta,
        )

    def same_family(self, other: "ContextDistribution") -> bool:
        """True when both distributions share dimension and target."""
        return self.d == other.d and np.array_equal(
            self.target.sigma_tilde_diag, other.target.sigma_tilde_diag
        )


def sample(dist: ContextDistribution, rng: np.random.Generator, k: int) -> np.ndarray:
    """Draw ``k`` independent contexts, returned as a ``(k, d)`` array.

    Deterministic for a given generator state.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    std = np.sqrt(dist.covariance_diag())
    return dist.mu + rng.standard_normal((k, dist.d)) * std


def log_density(dist: ContextDistribution, c: np.ndarray) -> np.ndarray | float:
    """Log of the Gaussian density at ``c``.

    Accepts a single context ``(d,)`` or a batch ``(k, d)``; returns a scalar
    or a ``(k,)`` array accordingly.
    """
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != dist.d:
        raise ValueError("context dimension mismatch")
    var = dist.covariance_diag()
    log_norm = 0.5 * dist.d * np.log(2.0 * np.pi) + 0.5 * np.sum(np.log(var))
    quad = 0.5 * np.sum((c - dist.mu) ** 2 / var, axis=-1)
    return -quad - log_norm


def importance_ratio(
    new_dist: ContextDistribution, old_dist: ContextDistribution, c: np.ndarray
) -> np.ndarray | float:
    """Density ratio ``p_new(c) / p_old(c)``, clamped to ``[1e-30, 1e30]``.

    Both distributions must share the target spec.
    """
    if not new_dist.same_family(old_dist):
        raise ValueError("importance ratio requires a common target spec")
    log_ratio = log_density(new_dist, c) - log_density(old_dist, c)
    return np.exp(np.clip(log_ratio, -_LOG_RATIO_LIMIT, _LOG_RATIO_LIMIT))


def kl_to_target(dist: ContextDistribution) -> float:
    """KL divergence from the target to the sampling distribution.

    Closed form for the scaled-covariance family:
    ``0.5 * sum((mu - mu_tilde)^2 / (theta * sigma) + 1/theta + ln(theta) - 1)``.
    Zero exactly when ``mu == mu_tilde`` and ``theta == 1``.
    """
    sigma = dist.target.sigma_tilde_diag
    delta = dist.mu - dist.target.mu_tilde
    terms = delta**2 / (dist.theta * sigma) + 1.0 / dist.theta + np.log(dist.theta) - 1.0
    return 0.5 * float(np.sum(terms))


def kl_between(new_dist: ContextDistribution, old_dist: ContextDistribution) -> float:
    """KL divergence ``KL(new || old)`` between two members of the family."""
    if not new_dist.same_family(old_dist):
        raise ValueError("kl_between requires a common target spec")
    sigma = old_dist.target.sigma_tilde_diag
    ratio = new_dist.theta / old_dist.theta
    delta = new_dist.mu - old_dist.mu
    terms = ratio - 1.0 - np.log(ratio) + delta**2 / (old_dist.theta * sigma)
    return 0.5 * float(np.sum(terms))


def mean_shift_kl(new_dist: ContextDistribution, old_dist: ContextDistribution) -> float:
    """Mean-only component of ``kl_between``: ``0.5 ||mu_new - mu_old||^2``
    in the old precision metric.  For mean-only updates this equals
    :func:`kl_between` exactly.
    """
    sigma = old_dist.target.sigma_tilde_diag
    delta = new_dist.mu - old_dist.mu
    return 0.5 * float(np.sum(delta**2 / (old_dist.theta * sigma)))
