"""Closed-form curriculum updates of the Gaussian context distribution.

Each curriculum update dispatches on the batch mean value:

* below the performance threshold -> *performance step*: move mean and
  covariance scales along the value gradient to the boundary of the KL trust
  region (maximize attainable value).
* at or above the threshold -> *convergence step*: move toward the target
  distribution, subject to the linearized performance constraint and the same
  trust region (minimize KL to the target).

Both steps are block-coordinate: the mean block and the scale block are each
solved in closed form against the pre-update geometry.  The mean block's KL
is exact; the scale block bounds a second-order expansion of the step KL, so
:func:`update` additionally verifies the true joint KL and backtracks the
scale displacement if the expansion undershot.

The convergence solutions come from a two-constraint KKT case analysis.
Every returned case carries multipliers, and the case conditions double as
the KKT certificate; near case boundaries all candidate cases are checked
and the feasible one with the smaller objective wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import (
    ContextDistribution,
    TargetSpec,
    importance_ratio,
    kl_between,
    kl_to_target,
    mean_shift_kl,
)
from .stats import CurriculumStats, RolloutBatch, compute_stats

__all__ = [
    "CurriculumConfig",
    "CurriculumError",
    "DegenerateUpdate",
    "InfeasiblePerformanceConstraint",
    "MultiplierSolution",
    "UpdateReport",
    "convergence_mu_step",
    "convergence_theta_step",
    "mu_kkt_residuals",
    "performance_step",
    "should_run_performance_step",
    "solve_mu_multipliers",
    "solve_theta_multipliers",
    "theta_kkt_residuals",
    "update",
]

# Gradient norms below this leave no informative step direction.
DEGENERATE_NORM = 1e-10

# Absolute slack when evaluating case-selection inequalities.
CASE_TOL = 1e-10

BOTH_INACTIVE = "both_inactive"
PERF_ACTIVE = "perf_active"
PROXIMITY_ACTIVE = "proximity_active"
BOTH_ACTIVE = "both_active"


class CurriculumError(RuntimeError):
    """Base class for curriculum update failures."""


class DegenerateUpdate(CurriculumError):
    """Raised when neither block has an informative gradient direction."""


class InfeasiblePerformanceConstraint(CurriculumError):
    """Raised when no point of the trust region meets the performance bound."""


@dataclass(frozen=True)
class CurriculumConfig:
    """Hyper-parameters of the curriculum update.

    Attributes:
        epsilon: KL trust-region radius per update.
        v_lower: Minimum mean value required before convergence steps run.
        k_contexts: Batch size K.
        update_period: Curriculum update period in training iterations.
        theta_min: Positivity floor for covariance scales.
        standardize_values: Standardize values inside the gradient statistics.
        combined_step: Run a convergence phase after a performance phase in
            the same update (off by default: one step kind per update).
    """

    epsilon: float
    v_lower: float
    k_contexts: int = 64
    update_period: int = 1
    theta_min: float = 1e-6
    standardize_values: bool = False
    combined_step: bool = False

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.k_contexts < 2:
            raise ValueError("k_contexts must be >= 2")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.theta_min <= 0.0:
            raise ValueError("theta_min must be positive")


@dataclass(frozen=True)
class MultiplierSolution:
    """Multipliers of one convergence block.

    For the mean block these are (lambda_1, lambda_2): performance multiplier
    and the affine trust-region multiplier (>= 1, with lambda_2 - 1 the raw
    ball multiplier).  For the scale block the same slots hold (lambda_3,
    lambda_4).  In the scale block's jump case (both constraints inactive,
    scales reset to one) both entries are zero.
    """

    lambda_perf: float
    lambda_ball: float
    active_case: str


@dataclass(frozen=True)
class UpdateReport:
    """What one curriculum update did, for logging and verification."""

    kind: str
    degenerate: bool
    mu_solution: MultiplierSolution | None
    theta_solution: MultiplierSolution | None
    kl_step: float
    kl_step_mean_part: float
    kl_to_target_before: float
    kl_to_target_after: float
    theta_backtracked: bool
    trust_region_backtracked: bool

    @property
    def active_case(self) -> str:
        """Compact case label for CSV output."""
        if self.mu_solution is None and self.theta_solution is None:
            return "-"
        mu = self.mu_solution.active_case if self.mu_solution else "-"
        th = self.theta_solution.active_case if self.theta_solution else "-"
        return f"{mu}|{th}"


# ---------------------------------------------------------------------------
# dispatch


def should_run_performance_step(stats: CurriculumStats, config: CurriculumConfig) -> bool:
    """True when the batch mean value falls short of the threshold.

    Equality counts as satisfied, so the boundary runs a convergence step.
    """
    return stats.v_bar < config.v_lower


# ---------------------------------------------------------------------------
# performance step (value maximization on the trust-region boundary)


def _mu_performance_block(dist, u_bar, eps):
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    norm_u = math.sqrt(float(np.sum(u_bar**2 * precision)))
    if norm_u < DEGENERATE_NORM:
        return dist.mu, False
    return dist.mu + math.sqrt(2.0 * eps) * u_bar / norm_u, True


def _clip_theta_step(theta, delta, theta_min):
    """Largest backtracking scale keeping all scales at or above the floor."""
    scale = 1.0
    shrinking = delta < 0.0
    if np.any(shrinking):
        scale = min(
            1.0,
            float(np.min((theta[shrinking] - theta_min) / (-delta[shrinking]))),
        )
        scale = max(scale, 0.0)
    return theta + scale * delta, scale < 1.0


def _theta_performance_block(dist, psi_bar, eps, theta_min):
    h_inv = dist.theta**2
    norm_psi = math.sqrt(float(np.sum(psi_bar**2 * h_inv)))
    if norm_psi < DEGENERATE_NORM:
        return dist.theta, False, False
    delta = 2.0 * math.sqrt(eps) * h_inv * psi_bar / norm_psi
    theta_new, backtracked = _clip_theta_step(dist.theta, delta, theta_min)
    return theta_new, True, backtracked


def _performance_budget_split(dist, stats, eps):
    """Split the joint trust-region budget across the two blocks so the
    composed step solves the *joint* linearized problem.

    The linearized gain of a mean budget ``e`` is ``sqrt(2 e) ||u_bar||`` and
    of a scale budget ``2 sqrt(e) ||psi_bar||`` (block metrics), so the
    optimal mean share is ``||u_bar||^2 / (||u_bar||^2 + 2 ||psi_bar||^2)``.
    A degenerate block cedes its whole share to the other.
    """
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    norm_u_sq = float(np.sum(stats.u_bar**2 * precision))
    norm_psi_sq = float(np.sum(stats.psi_bar**2 * dist.theta**2))
    if math.sqrt(norm_u_sq) < DEGENERATE_NORM:
        return 0.0, eps
    if math.sqrt(norm_psi_sq) < DEGENERATE_NORM:
        return eps, 0.0
    share = norm_u_sq / (norm_u_sq + 2.0 * norm_psi_sq)
    return share * eps, (1.0 - share) * eps


def performance_step(
    dist: ContextDistribution, stats: CurriculumStats, config: CurriculumConfig
) -> ContextDistribution:
    """Apply both value-ascent blocks under the joint trust region.

    Each block moves to its boundary: the mean to
    ``mu + sqrt(2 e_mu) u_bar / ||u_bar||`` and the scales to
    ``theta + 2 sqrt(e_theta) H^-1 psi_bar / ||psi_bar||`` (norms in the block
    metrics), with the budgets ``e_mu + e_theta = epsilon`` split so the
    composed move maximizes the joint linearized gain.  A block whose gradient
    norm falls below ``1e-10`` is left unchanged and cedes its budget; if both
    are degenerate the step has no informative direction and
    :class:`DegenerateUpdate` is raised.
    """
    eps_mu, eps_theta = _performance_budget_split(dist, stats, config.epsilon)
    if eps_mu == 0.0 and math.sqrt(
        float(np.sum(stats.psi_bar**2 * dist.theta**2))
    ) < DEGENERATE_NORM:
        raise DegenerateUpdate("both value gradients are numerically zero")
    mu_new = dist.mu
    theta_new = dist.theta
    if eps_mu > 0.0:
        mu_new, _ = _mu_performance_block(dist, stats.u_bar, eps_mu)
    if eps_theta > 0.0:
        theta_new, _, _ = _theta_performance_block(
            dist, stats.psi_bar, eps_theta, config.theta_min
        )
    return dist.with_params(mu=mu_new, theta=theta_new)


# ---------------------------------------------------------------------------
# convergence step, mean block


def _solve_mu_block(dist, target, stats, eps, v_lower, tol=CASE_TOL):
    """Minimize the (quadratic) distance to the target mean inside the trust
    region, subject to the linearized performance constraint.

    Returns ``(mu_new, MultiplierSolution)``.
    """
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    u = stats.u_bar
    a = target.mu_tilde - dist.mu
    b = stats.v_bar - v_lower

    norm_a_sq = float(np.sum(a**2 * precision))
    norm_u_sq = float(np.sum(u**2 * precision))
    inner_ua = float(np.sum(u * a * precision))

    value_scale = max(1.0, abs(b), math.sqrt(2.0 * eps * norm_u_sq))
    geom_scale = max(1.0, norm_a_sq, 2.0 * eps)

    if b + math.sqrt(2.0 * eps * norm_u_sq) < -tol * value_scale:
        raise InfeasiblePerformanceConstraint(
            "no point of the trust region satisfies the performance bound"
        )

    def run(slack):
        vtol = slack * value_scale
        gtol = slack * geom_scale
        candidates = []

        def consider(mu_new, lam1, lam2, case):
            delta = mu_new - dist.mu
            perf = b + float(np.sum(u * delta * precision))
            ball = 0.5 * float(np.sum(delta**2 * precision))
            if perf < -vtol or ball > eps + gtol:
                return
            if lam1 < -slack or lam2 < 1.0 - slack:
                return
            # complementary slackness
            if lam1 > slack and abs(perf) > vtol:
                return
            if lam2 > 1.0 + slack and abs(ball - eps) > gtol:
                return
            objective = 0.5 * float(np.sum((mu_new - target.mu_tilde) ** 2 * precision))
            candidates.append((objective, mu_new, lam1, lam2, case))

        consider(np.array(target.mu_tilde, dtype=float, copy=True), 0.0, 1.0, BOTH_INACTIVE)
        if norm_u_sq > DEGENERATE_NORM**2:
            lam1 = -(b + inner_ua) / norm_u_sq
            consider(target.mu_tilde + lam1 * u, lam1, 1.0, PERF_ACTIVE)
        if norm_a_sq > DEGENERATE_NORM**2:
            lam2 = math.sqrt(norm_a_sq / (2.0 * eps))
            consider(dist.mu + a / lam2, 0.0, lam2, PROXIMITY_ACTIVE)
        if norm_u_sq > DEGENERATE_NORM**2:
            denom = 2.0 * eps * norm_u_sq - b * b
            numer = max(norm_a_sq * norm_u_sq - inner_ua**2, 0.0)
            if denom > 0.0 and numer > 0.0:
                lam2 = math.sqrt(numer / denom)
                if lam2 > DEGENERATE_NORM:
                    lam1 = -(lam2 * b + inner_ua) / norm_u_sq
                    consider(dist.mu + (a + lam1 * u) / lam2, lam1, lam2, BOTH_ACTIVE)
        return candidates

    candidates = run(tol)
    if not candidates:
        candidates = run(tol * 100.0)
    if not candidates:
        raise CurriculumError("no KKT case matched the mean subproblem")

    objective, mu_new, lam1, lam2, case = min(candidates, key=lambda c: c[0])
    return np.asarray(mu_new, dtype=float), MultiplierSolution(lam1, lam2, case)


def solve_mu_multipliers(
    stats: CurriculumStats,
    dist: ContextDistribution,
    target: TargetSpec,
    config: CurriculumConfig,
) -> MultiplierSolution:
    """Multipliers of the mean convergence block at the configured radius."""
    _, solution = _solve_mu_block(dist, target, stats, config.epsilon, config.v_lower)
    return solution


def convergence_mu_step(
    dist: ContextDistribution,
    stats: CurriculumStats,
    target: TargetSpec,
    config: CurriculumConfig,
) -> np.ndarray:
    """New mean of the convergence step: ``mu + (mu_tilde - mu + lambda_1
    u_bar) / lambda_2``; exactly the target mean when both constraints are
    inactive."""
    mu_new, _ = _solve_mu_block(dist, target, stats, config.epsilon, config.v_lower)
    return mu_new


# ---------------------------------------------------------------------------
# convergence step, scale block


def _solve_theta_block(dist, stats, eps, v_lower, theta_min, tol=CASE_TOL):
    """Descend the KL-to-target gradient in ``theta`` inside the trust region,
    subject to the linearized performance constraint.

    The KKT cases of the linearized problem produce the constrained descent
    step.  Jumping straight to scales of one (the target scale, where both
    constraints sit inactive) is taken instead whenever it is feasible and
    serves the true convergence objective at least as well; near the target
    this pins the scales at exactly one.  Returns
    ``(theta_new, MultiplierSolution, backtracked)``.
    """
    theta = dist.theta
    h_inv = theta**2
    psi = stats.psi_bar
    omega = stats.omega
    b = stats.v_bar - v_lower

    norm_om_sq = float(np.sum(omega**2 * h_inv))
    norm_psi_sq = float(np.sum(psi**2 * h_inv))
    inner_po = float(np.sum(psi * omega * h_inv))

    value_scale = max(1.0, abs(b), 2.0 * math.sqrt(eps * norm_psi_sq))

    if b + 2.0 * math.sqrt(eps * norm_psi_sq) < -tol * value_scale:
        raise InfeasiblePerformanceConstraint(
            "no point of the trust region satisfies the performance bound"
        )

    ones = np.ones_like(theta)

    def jump_feasible(slack):
        vtol = slack * value_scale
        gtol = slack * max(1.0, eps)
        ball_ok = 0.25 * float(np.sum((ones - theta) ** 2 / h_inv)) <= eps + gtol
        perf_ok = b + float(np.sum(psi * (ones - theta))) >= -vtol
        return ball_ok and perf_ok

    def kl_score(theta_vec):
        """KL to the target as a function of the scales (mean held at its
        pre-update value): the convergence objective the linear model
        approximates.  Used only to arbitrate between the reachable target
        scale and the constrained descent step."""
        sigma = dist.target.sigma_tilde_diag
        gap = (dist.target.mu_tilde - dist.mu) ** 2 / sigma
        return 0.5 * float(np.sum((gap + 1.0) / theta_vec + np.log(theta_vec) - 1.0))

    def run(slack):
        vtol = slack * value_scale
        gtol = slack * max(1.0, eps)
        candidates = []

        def consider(theta_new, lam3, lam4, case):
            delta = theta_new - theta
            perf = b + float(np.sum(psi * delta))
            ball = 0.25 * float(np.sum(delta**2 / h_inv))
            if perf < -vtol or ball > eps + gtol:
                return
            if lam3 < -slack or lam4 < -slack:
                return
            if lam3 > slack and abs(perf) > vtol:
                return
            if lam4 > slack and abs(ball - eps) > gtol:
                return
            objective = float(np.sum(omega * delta))
            candidates.append((objective, theta_new, lam3, lam4, case))

        norm_om = math.sqrt(norm_om_sq)
        if norm_om >= DEGENERATE_NORM:
            lam4 = norm_om / (2.0 * math.sqrt(eps))
            consider(theta - h_inv * omega / lam4, 0.0, lam4, PROXIMITY_ACTIVE)
            if norm_psi_sq > DEGENERATE_NORM**2:
                # Performance face active with the trust region slack.  This
                # needs the objective gradient colinear with the constraint
                # normal, which is generic in one dimension; the canonical
                # point is the metric projection of the center onto the face.
                lam3 = inner_po / norm_psi_sq
                residual = omega - lam3 * psi
                colinear = math.sqrt(float(np.sum(residual**2 * h_inv))) <= 1e-9 * max(
                    norm_om, 1.0
                )
                if lam3 >= -slack and colinear:
                    consider(theta - b * h_inv * psi / norm_psi_sq, lam3, 0.0, PERF_ACTIVE)
                denom = 4.0 * eps * norm_psi_sq - b * b
                numer = max(norm_om_sq * norm_psi_sq - inner_po**2, 0.0)
                if denom > 0.0:
                    lam4 = math.sqrt(numer / denom)
                    if lam4 > DEGENERATE_NORM:
                        lam3 = (inner_po - lam4 * b) / norm_psi_sq
                        consider(
                            theta + h_inv * (lam3 * psi - omega) / lam4, lam3, lam4, BOTH_ACTIVE
                        )
        else:
            # Zero objective gradient: any feasible point is optimal; stay.
            consider(np.array(theta, dtype=float, copy=True), 0.0, 0.0, PROXIMITY_ACTIVE)
        return candidates

    candidates = run(tol)
    if not candidates:
        candidates = run(tol * 100.0)
    if not candidates and jump_feasible(tol * 100.0):
        return ones, MultiplierSolution(0.0, 0.0, BOTH_INACTIVE), False
    if not candidates:
        raise CurriculumError("no KKT case matched the scale subproblem")

    objective, theta_new, lam3, lam4, case = min(candidates, key=lambda c: c[0])
    theta_new, backtracked = _clip_theta_step(theta, np.asarray(theta_new) - theta, theta_min)

    # Jumping straight to the target scale is allowed whenever it is feasible
    # AND it serves the convergence objective at least as well as the
    # constrained descent step; the comparison uses the true KL, which the
    # linear model cannot rank (it would always prefer the boundary).
    if jump_feasible(tol) and kl_score(ones) <= kl_score(theta_new):
        return ones, MultiplierSolution(0.0, 0.0, BOTH_INACTIVE), False
    return theta_new, MultiplierSolution(lam3, lam4, case), backtracked


def solve_theta_multipliers(
    stats: CurriculumStats, dist: ContextDistribution, config: CurriculumConfig
) -> MultiplierSolution:
    """Multipliers of the scale convergence block at the configured radius."""
    _, solution, _ = _solve_theta_block(
        dist, stats, config.epsilon, config.v_lower, config.theta_min
    )
    return solution


def convergence_theta_step(
    dist: ContextDistribution, stats: CurriculumStats, config: CurriculumConfig
) -> np.ndarray:
    """New scales of the convergence step: all ones when both constraints are
    inactive, otherwise ``theta + H^-1 (lambda_3 psi_bar - omega) / lambda_4``
    with positivity backtracking."""
    theta_new, _, _ = _solve_theta_block(
        dist, stats, config.epsilon, config.v_lower, config.theta_min
    )
    return theta_new


# ---------------------------------------------------------------------------
# KKT certificates (shared by tests and the verify suite)


def mu_kkt_residuals(dist, target, stats, eps, v_lower, mu_new, solution):
    """Residuals of the mean-block KKT system at a candidate solution.

    Returns a dict of nonnegative residuals (stationarity, primal, dual,
    complementary slackness), each normalized by the problem scale.
    """
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    u = stats.u_bar
    delta = mu_new - dist.mu
    b = stats.v_bar - v_lower
    lam1, lam2 = solution.lambda_perf, solution.lambda_ball

    grad = (mu_new - target.mu_tilde) * precision
    stationarity = grad - lam1 * u * precision + (lam2 - 1.0) * delta * precision
    scale = max(1.0, float(np.max(np.abs(grad))), float(np.max(np.abs(u * precision)) * max(lam1, 1.0)))

    perf = b + float(np.sum(u * delta * precision))
    ball = 0.5 * float(np.sum(delta**2 * precision))
    value_scale = max(1.0, abs(b))
    geom_scale = max(1.0, eps)

    return {
        "stationarity": float(np.max(np.abs(stationarity))) / scale,
        "primal_perf": max(0.0, -perf) / value_scale,
        "primal_ball": max(0.0, ball - eps) / geom_scale,
        "dual": max(0.0, -lam1) + max(0.0, 1.0 - lam2),
        "slack_perf": abs(lam1 * perf) / (value_scale * max(lam1, 1.0)),
        "slack_ball": abs((lam2 - 1.0) * (ball - eps)) / (geom_scale * max(lam2, 1.0)),
    }


def theta_kkt_residuals(dist, stats, eps, v_lower, theta_new, solution):
    """Residuals of the scale-block certificate at a candidate solution.

    The jump case (scales reset to one) is certified by primal feasibility of
    both constraints alone; the multiplier cases additionally satisfy the
    stationarity and slackness conditions of the linearized problem.
    """
    theta = dist.theta
    h_diag = 1.0 / theta**2
    psi = stats.psi_bar
    omega = stats.omega
    delta = np.asarray(theta_new) - theta
    b = stats.v_bar - v_lower
    lam3, lam4 = solution.lambda_perf, solution.lambda_ball

    perf = b + float(np.sum(psi * delta))
    ball = 0.25 * float(np.sum(delta**2 * h_diag))
    value_scale = max(1.0, abs(b))
    geom_scale = max(1.0, eps)

    residuals = {
        "primal_perf": max(0.0, -perf) / value_scale,
        "primal_ball": max(0.0, ball - eps) / geom_scale,
        "dual": max(0.0, -lam3) + max(0.0, -lam4),
    }
    if solution.active_case == BOTH_INACTIVE:
        residuals["stationarity"] = 0.0
        residuals["slack_perf"] = 0.0
        residuals["slack_ball"] = 0.0
        return residuals

    stationarity = omega - lam3 * psi + lam4 * h_diag * delta
    scale = max(1.0, float(np.max(np.abs(omega))), float(np.max(np.abs(psi)) * max(lam3, 1.0)))
    residuals["stationarity"] = float(np.max(np.abs(stationarity))) / scale
    residuals["slack_perf"] = abs(lam3 * perf) / (value_scale * max(lam3, 1.0))
    residuals["slack_ball"] = abs(lam4 * (ball - eps)) / (geom_scale * max(lam4, 1.0))
    return residuals


# ---------------------------------------------------------------------------
# full update


def _backtrack_joint_kl(dist, mu_new, theta_new, eps):
    """Shrink the scale displacement until the true step KL fits the radius.

    The mean part is exact and never exceeds its share; only the second-order
    expansion of the scale part can overshoot.  The KL grows monotonically
    along the scale segment, so bisection applies.
    """
    candidate = dist.with_params(mu=mu_new, theta=theta_new)
    joint = kl_between(candidate, dist)
    if joint <= eps + 1e-12:
        return candidate, joint, False

    delta = theta_new - dist.theta
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        trial = dist.with_params(mu=mu_new, theta=dist.theta + mid * delta)
        if kl_between(trial, dist) > eps:
            hi = mid
        else:
            lo = mid
    candidate = dist.with_params(mu=mu_new, theta=dist.theta + lo * delta)
    return candidate, kl_between(candidate, dist), True


def _reweighted_stats(batch, mid_dist, target, standardize):
    """Batch statistics against an intermediate distribution, with values
    importance-reweighted from the generating distribution."""
    contexts = batch.contexts()
    values = batch.values() * importance_ratio(mid_dist, batch.source_distribution, contexts)
    theta = mid_dist.theta
    sigma = mid_dist.target.sigma_tilde_diag
    delta = contexts - mid_dist.mu

    grad_values = values
    v_bar = float(np.mean(values))
    if standardize:
        std = float(np.std(values))
        grad_values = (values - v_bar) / (std if std > 0.0 else 1.0)

    u_bar = np.mean(grad_values[:, None] * delta, axis=0)
    psi_bar = 0.5 * np.mean(
        grad_values[:, None] * (delta**2 / (theta**2 * sigma) - 1.0 / theta), axis=0
    )
    h_diag = 1.0 / theta**2
    om_delta = target.mu_tilde - mid_dist.mu
    omega = 0.5 * (1.0 / theta - 1.0 / theta**2 - om_delta**2 / (theta**2 * sigma))
    return CurriculumStats(u_bar=u_bar, v_bar=v_bar, psi_bar=psi_bar, h_diag=h_diag, omega=omega)


def _performance_phase(dist, stats, eps, theta_min):
    eps_mu, eps_theta = _performance_budget_split(dist, stats, eps)
    mu_new, theta_new = dist.mu, dist.theta
    mu_moved = theta_moved = backtracked = False
    if eps_mu > 0.0:
        mu_new, mu_moved = _mu_performance_block(dist, stats.u_bar, eps_mu)
    if eps_theta > 0.0:
        theta_new, theta_moved, backtracked = _theta_performance_block(
            dist, stats.psi_bar, eps_theta, theta_min
        )
    return mu_new, theta_new, mu_moved or theta_moved, backtracked


def _convergence_budget_split(dist, target, stats, eps):
    """Mean share of the joint radius for the convergence step.

    The marginal KL-to-target decrease of a mean budget ``e`` scales with
    ``dist / sqrt(2 e)`` (``dist`` the metric distance to the target mean) and
    of a scale budget with ``||omega|| / sqrt(e)``; equating them gives the
    same form as the performance split with ``dist`` in place of ``||u_bar||``.
    """
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    dist_sq = float(np.sum((target.mu_tilde - dist.mu) ** 2 * precision))
    omega_sq = float(np.sum(stats.omega**2 * dist.theta**2))
    if math.sqrt(dist_sq) < DEGENERATE_NORM and math.sqrt(omega_sq) < DEGENERATE_NORM:
        return 0.5 * eps
    if math.sqrt(omega_sq) < DEGENERATE_NORM:
        return eps
    if math.sqrt(dist_sq) < DEGENERATE_NORM:
        return 0.0
    return eps * dist_sq / (dist_sq + 2.0 * omega_sq)


def _convergence_phase(dist, target, stats, eps, v_lower, theta_min):
    """Mean block capped at its marginal-value share of the radius; the scale
    block receives everything the mean block did not spend (jump cases leave
    most of it)."""
    eps_mu = max(_convergence_budget_split(dist, target, stats, eps), 1e-6 * eps)
    mu_new, mu_sol = _solve_mu_block(dist, target, stats, eps_mu, v_lower)
    precision = 1.0 / (dist.theta * dist.target.sigma_tilde_diag)
    spent = 0.5 * float(np.sum((mu_new - dist.mu) ** 2 * precision))
    eps_theta = max(eps - spent, 1e-18)
    theta_new, theta_sol, backtracked = _solve_theta_block(
        dist, stats, eps_theta, v_lower, theta_min
    )
    return mu_new, theta_new, mu_sol, theta_sol, backtracked


def update(
    dist: ContextDistribution,
    batch: RolloutBatch,
    target: TargetSpec,
    config: CurriculumConfig,
) -> tuple[ContextDistribution, UpdateReport]:
    """One full curriculum update.

    Computes the batch statistics, dispatches on the performance condition,
    and applies the selected step.  The trust-region budget ``epsilon`` bounds
    the *joint* KL of the update: the performance step splits it across the
    blocks gain-optimally, the convergence step hands the scale block whatever
    the mean block left unspent, and the composed step is verified against the
    exact KL (backtracking the scale displacement when the second-order
    expansion undershot the true divergence).  A degenerate performance step
    leaves the distribution unchanged and flags the report.
    """
    stats = compute_stats(batch, dist, target, config.standardize_values)
    kl_before = kl_to_target(dist)

    n_phases = 2 if config.combined_step and should_run_performance_step(stats, config) else 1
    phase_eps = config.epsilon / n_phases

    mu_sol = theta_sol = None
    degenerate = False
    theta_backtracked = False

    if should_run_performance_step(stats, config):
        kind = "performance"
        mu_new, theta_new, moved, theta_backtracked = _performance_phase(
            dist, stats, phase_eps, config.theta_min
        )
        if not moved:
            report = UpdateReport(
                kind=kind,
                degenerate=True,
                mu_solution=None,
                theta_solution=None,
                kl_step=0.0,
                kl_step_mean_part=0.0,
                kl_to_target_before=kl_before,
                kl_to_target_after=kl_before,
                theta_backtracked=False,
                trust_region_backtracked=False,
            )
            return dist, report
        if n_phases == 2:
            mid = dist.with_params(mu=mu_new, theta=theta_new)
            mid_stats = _reweighted_stats(batch, mid, target, config.standardize_values)
            if not should_run_performance_step(mid_stats, config):
                m2, t2, mu_sol, theta_sol, bt2 = _convergence_phase(
                    mid, target, mid_stats, phase_eps, config.v_lower, config.theta_min
                )
                mu_new, theta_new = m2, t2
                theta_backtracked = theta_backtracked or bt2
    else:
        kind = "convergence"
        mu_new, theta_new, mu_sol, theta_sol, theta_backtracked = _convergence_phase(
            dist, target, stats, config.epsilon, config.v_lower, config.theta_min
        )

    new_dist, kl_step, tr_backtracked = _backtrack_joint_kl(
        dist, np.asarray(mu_new, dtype=float), np.asarray(theta_new, dtype=float), config.epsilon
    )

    report = UpdateReport(
        kind=kind,
        degenerate=degenerate,
        mu_solution=mu_sol,
        theta_solution=theta_sol,
        kl_step=kl_step,
        kl_step_mean_part=mean_shift_kl(new_dist, dist),
        kl_to_target_before=kl_before,
        kl_to_target_after=kl_to_target(new_dist),
        theta_backtracked=theta_backtracked,
        trust_region_backtracked=tr_backtracked,
    )
    return new_dist, report
