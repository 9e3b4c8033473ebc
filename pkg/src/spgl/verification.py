"""Randomized cross-check suites: closed forms vs the numerical oracle,
gradient statistics vs finite differences, and closed-form vs exact-solver
timing.

These suites back the ``verify`` CLI subcommand and the acceptance tests.
Instances are generated over dimensions {1, 2, 3, 5} with broad parameter
ranges, and the per-case selection counts are reported so case coverage is
visible.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .gaussian import ContextDistribution, TargetSpec, importance_ratio, kl_between, kl_to_target
from .oracle import LinearizedSubproblem, numerical_update, solve_numeric
from .stats import ContextRollout, CurriculumStats, RolloutBatch, compute_geometry_stats, compute_value_stats
from .update import (
    BOTH_INACTIVE,
    CurriculumConfig,
    _solve_mu_block,
    _solve_theta_block,
    mu_kkt_residuals,
    theta_kkt_residuals,
    update,
)

__all__ = ["VerifyReport", "run_fd_suite", "run_oracle_suite", "run_timing_suite"]

DIMENSIONS = (1, 2, 3, 5)
PARAM_RTOL = 1e-6
KKT_TOL = 1e-8
FD_RTOL = 1e-4
FD_STEP = 1e-5


@dataclass
class VerifyReport:
    """Aggregated residuals of the verification suites."""

    oracle_max_param_error: float = 0.0
    oracle_max_multiplier_error: float = 0.0
    oracle_max_kkt_residual: float = 0.0
    oracle_case_counts: dict = field(default_factory=dict)
    fd_max_error: float = 0.0
    closed_form_seconds: float = 0.0
    exact_solver_seconds: float = 0.0
    failures: list = field(default_factory=list)

    @property
    def speedup(self) -> float:
        if self.closed_form_seconds <= 0.0:
            return math.inf
        return self.exact_solver_seconds / self.closed_form_seconds

    @property
    def passed(self) -> bool:
        return not self.failures

    def merge(self, other: "VerifyReport") -> None:
        self.oracle_max_param_error = max(self.oracle_max_param_error, other.oracle_max_param_error)
        self.oracle_max_multiplier_error = max(
            self.oracle_max_multiplier_error, other.oracle_max_multiplier_error
        )
        self.oracle_max_kkt_residual = max(
            self.oracle_max_kkt_residual, other.oracle_max_kkt_residual
        )
        counts = Counter(self.oracle_case_counts)
        counts.update(other.oracle_case_counts)
        self.oracle_case_counts = dict(counts)
        self.fd_max_error = max(self.fd_max_error, other.fd_max_error)
        self.closed_form_seconds += other.closed_form_seconds
        self.exact_solver_seconds += other.exact_solver_seconds
        self.failures.extend(other.failures)

    def format_lines(self) -> list[str]:
        lines = [
            f"oracle suite: max parameter error {self.oracle_max_param_error:.3e}"
            f" (limit {PARAM_RTOL:.0e})",
            f"oracle suite: max multiplier error {self.oracle_max_multiplier_error:.3e}"
            f" (limit {PARAM_RTOL:.0e})",
            f"oracle suite: max KKT residual {self.oracle_max_kkt_residual:.3e}"
            f" (limit {KKT_TOL:.0e})",
            f"oracle suite: case counts {self.oracle_case_counts}",
            f"finite differences: max relative error {self.fd_max_error:.3e}"
            f" (limit {FD_RTOL:.0e})",
        ]
        if self.exact_solver_seconds > 0.0:
            lines.append(
                "timing: closed form "
                f"{self.closed_form_seconds * 1e3:.3f} ms vs exact solver "
                f"{self.exact_solver_seconds * 1e3:.1f} ms per update "
                f"(speedup {self.speedup:.1f}x)"
            )
        for failure in self.failures:
            lines.append(f"FAIL: {failure}")
        if not self.failures:
            lines.append("all verification suites passed")
        return lines


def _random_geometry(rng, d):
    sigma = np.exp(rng.uniform(math.log(1e-3), math.log(3.0), d))
    theta = np.exp(rng.uniform(math.log(0.1), math.log(10.0), d))
    mu = rng.normal(0.0, 2.0, d)
    return mu, theta, sigma


def _rel_vec_error(candidate, reference):
    ref_norm = float(np.linalg.norm(np.asarray(reference)))
    return float(np.linalg.norm(np.asarray(candidate) - np.asarray(reference))) / max(
        1.0, ref_norm
    )


def _rel_scalar_error(candidate, reference):
    return abs(candidate - reference) / max(1.0, abs(reference))


def _make_stats(d, u_bar=None, v_bar=0.0, psi_bar=None, h_diag=None, omega=None):
    return CurriculumStats(
        u_bar=np.zeros(d) if u_bar is None else u_bar,
        v_bar=v_bar,
        psi_bar=np.zeros(d) if psi_bar is None else psi_bar,
        h_diag=np.ones(d) if h_diag is None else h_diag,
        omega=np.zeros(d) if omega is None else omega,
    )


def _perturbed(x, perturb, rng):
    if perturb == 0.0:
        return x
    noise = rng.standard_normal(np.shape(x)) if np.ndim(x) else rng.standard_normal()
    return x + perturb * (1.0 + np.abs(x)) * noise


def run_oracle_suite(
    seed: int, instances_per_block: int = 100, perturb: float = 0.0
) -> VerifyReport:
    """Compare every closed-form block against the dual-bisection oracle.

    ``perturb`` deliberately corrupts the closed-form outputs before the
    comparison; nonzero values must make the suite fail (sensitivity check).
    """
    rng = np.random.default_rng(seed)
    report = VerifyReport()
    counts = Counter()

    def record_param(label, closed, reference):
        err = _rel_vec_error(closed, reference)
        report.oracle_max_param_error = max(report.oracle_max_param_error, err)
        if err > PARAM_RTOL:
            report.failures.append(f"{label}: parameter error {err:.3e}")

    def record_mult(label, closed, reference):
        err = _rel_scalar_error(closed, reference)
        report.oracle_max_multiplier_error = max(report.oracle_max_multiplier_error, err)
        if err > PARAM_RTOL:
            report.failures.append(f"{label}: multiplier error {err:.3e}")

    def record_kkt(label, residuals):
        worst = max(residuals.values())
        report.oracle_max_kkt_residual = max(report.oracle_max_kkt_residual, worst)
        if worst > KKT_TOL:
            report.failures.append(f"{label}: KKT residual {worst:.3e}")

    for i in range(instances_per_block):
        d = DIMENSIONS[i % len(DIMENSIONS)]

        # ---- value-ascent mean block
        mu, theta, sigma = _random_geometry(rng, d)
        eps = float(np.exp(rng.uniform(math.log(1e-4), math.log(0.15))))
        if i % 7 == 0:
            # bias some targets inside the trust region so the jump-to-target
            # mean case gets exercised
            offset = rng.normal(0.0, 1.0, d)
            offset *= 0.5 * math.sqrt(2.0 * eps) / max(
                math.sqrt(float(np.sum(offset**2 / (theta * sigma)))), 1e-12
            )
            mu_tilde = mu + offset
        else:
            mu_tilde = rng.normal(0.0, 2.0, d)
        target = TargetSpec(mu_tilde=mu_tilde, sigma_tilde_diag=sigma)
        dist = ContextDistribution(mu=mu, theta=theta, target=target)
        precision = 1.0 / dist.covariance_diag()
        u_bar = rng.normal(0.0, 1.0, d) * float(np.exp(rng.uniform(-1.5, 1.5)))
        if math.sqrt(float(np.sum(u_bar**2 * precision))) < 1e-4:
            u_bar = u_bar + 0.1
        closed_mu = mu + math.sqrt(2.0 * eps) * u_bar / math.sqrt(
            float(np.sum(u_bar**2 * precision))
        )
        closed_mu = _perturbed(closed_mu, perturb, rng)
        oracle = solve_numeric(
            LinearizedSubproblem(
                center=mu,
                objective_gradient=precision * u_bar,
                metric_diag=precision,
                radius_sq=2.0 * eps,
                kind="kl_ball_mu",
            )
        )
        record_param(f"perf-mu[{i}]", closed_mu, oracle.x)
        record_kkt(f"perf-mu-oracle[{i}]", oracle.residuals)

        # ---- value-ascent scale block
        h_diag = 1.0 / theta**2
        psi_bar = rng.normal(0.0, 1.0, d) * float(np.exp(rng.uniform(-1.5, 1.5)))
        norm_psi = math.sqrt(float(np.sum(psi_bar**2 / h_diag)))
        if norm_psi < 1e-4:
            psi_bar = psi_bar + 0.1
            norm_psi = math.sqrt(float(np.sum(psi_bar**2 / h_diag)))
        closed_theta = theta + 2.0 * math.sqrt(eps) * (psi_bar / h_diag) / norm_psi
        closed_theta = _perturbed(closed_theta, perturb, rng)
        oracle = solve_numeric(
            LinearizedSubproblem(
                center=theta,
                objective_gradient=psi_bar,
                metric_diag=h_diag,
                radius_sq=4.0 * eps,
                kind="kl_ball_theta",
            )
        )
        record_param(f"perf-theta[{i}]", closed_theta, oracle.x)
        record_kkt(f"perf-theta-oracle[{i}]", oracle.residuals)

        # ---- convergence mean block
        for _ in range(200):
            b = _sample_threshold_gap(rng, math.sqrt(2.0 * eps * float(np.sum(u_bar**2 * precision))))
            if b + math.sqrt(2.0 * eps * float(np.sum(u_bar**2 * precision))) >= 1e-8:
                break
        stats = _make_stats(d, u_bar=u_bar, v_bar=b)
        mu_new, mu_sol = _solve_mu_block(dist, target, stats, eps, 0.0)
        mu_new = _perturbed(mu_new, perturb, rng)
        counts[f"mu:{mu_sol.active_case}"] += 1
        oracle = solve_numeric(
            LinearizedSubproblem(
                center=mu,
                objective_gradient=np.zeros(d),
                metric_diag=precision,
                radius_sq=2.0 * eps,
                kind="kl_ball_mu",
                performance=(precision * u_bar, b),
                quadratic_target=target.mu_tilde,
            )
        )
        record_param(f"conv-mu[{i}]", mu_new, oracle.x)
        record_mult(f"conv-mu-l1[{i}]", mu_sol.lambda_perf, oracle.lambda_perf)
        record_mult(f"conv-mu-l2[{i}]", mu_sol.lambda_ball, oracle.lambda_ball + 1.0)
        record_kkt(
            f"conv-mu-kkt[{i}]",
            mu_kkt_residuals(dist, target, stats, eps, 0.0, mu_new, mu_sol),
        )

        # ---- convergence scale block (jump branch excluded: it is not the
        # solution of the linearized problem and is tested directly instead)
        omega = rng.normal(0.0, 1.0, d) * float(np.exp(rng.uniform(-1.5, 1.5)))
        if math.sqrt(float(np.sum(omega**2 / h_diag))) < 1e-4:
            omega = omega + 0.1
        for _ in range(200):
            b = _sample_threshold_gap(
                rng, 2.0 * math.sqrt(eps * float(np.sum(psi_bar**2 / h_diag)))
            )
            feasible = b + 2.0 * math.sqrt(eps * float(np.sum(psi_bar**2 / h_diag))) >= 1e-8
            ones = np.ones(d)
            jump_ok = (
                0.25 * float(np.sum((ones - theta) ** 2 * h_diag)) <= eps
                and b + float(np.sum(psi_bar * (ones - theta))) >= 0.0
            )
            if feasible and not jump_ok:
                break
        else:
            continue
        stats = _make_stats(d, psi_bar=psi_bar, v_bar=b, h_diag=h_diag, omega=omega)
        theta_new, th_sol, backtracked = _solve_theta_block(dist, stats, eps, 0.0, 1e-12)
        if th_sol.active_case == BOTH_INACTIVE or backtracked:
            continue
        theta_new = _perturbed(theta_new, perturb, rng)
        counts[f"theta:{th_sol.active_case}"] += 1
        oracle = solve_numeric(
            LinearizedSubproblem(
                center=theta,
                objective_gradient=-omega,
                metric_diag=h_diag,
                radius_sq=4.0 * eps,
                kind="kl_ball_theta",
                performance=(psi_bar, b),
            )
        )
        record_param(f"conv-theta[{i}]", theta_new, oracle.x)
        record_mult(f"conv-theta-l3[{i}]", th_sol.lambda_perf, oracle.lambda_perf)
        record_mult(f"conv-theta-l4[{i}]", th_sol.lambda_ball, oracle.lambda_ball)
        record_kkt(
            f"conv-theta-kkt[{i}]",
            theta_kkt_residuals(dist, stats, eps, 0.0, theta_new, th_sol),
        )

    report.oracle_case_counts = dict(counts)
    return report


def _sample_threshold_gap(rng, reach):
    """Threshold gap v_bar - v_lower, mixed so all KKT cases occur."""
    mode = rng.uniform()
    scale = max(reach, 0.1)
    if mode < 0.45:
        return abs(rng.normal(0.0, 2.0 * scale))
    if mode < 0.8:
        return -abs(rng.normal(0.0, 0.5 * scale))
    return rng.normal(0.0, scale)


def _fd_batch(rng, d):
    sigma = np.exp(rng.uniform(math.log(0.05), math.log(2.0), d))
    theta = np.exp(rng.uniform(math.log(0.3), math.log(3.0), d))
    mu_tilde = rng.normal(0.0, 1.0, d)
    mu = mu_tilde + rng.normal(0.0, 1.0, d)
    target = TargetSpec(mu_tilde=mu_tilde, sigma_tilde_diag=sigma)
    dist = ContextDistribution(mu=mu, theta=theta, target=target)
    contexts = rng.normal(dist.mu, np.sqrt(dist.covariance_diag()), size=(16, d))
    values = rng.normal(1.0, 2.0, 16)
    rollouts = tuple(
        ContextRollout(context=c, value_estimate=float(v), episode_length=1, success=False)
        for c, v in zip(contexts, values)
    )
    return dist, RolloutBatch(rollouts=rollouts, source_distribution=dist)


def run_fd_suite(seed: int, instances: int = 100) -> VerifyReport:
    """Central finite-difference checks of u_bar, psi_bar, omega and h."""
    rng = np.random.default_rng(seed)
    report = VerifyReport()

    for i in range(instances):
        d = DIMENSIONS[i % len(DIMENSIONS)]
        dist, batch = _fd_batch(rng, d)
        contexts = batch.contexts()
        values = batch.values()

        def sampled(mu=None, theta=None):
            candidate = dist.with_params(mu=mu, theta=theta)
            return float(np.mean(values * importance_ratio(candidate, dist, contexts)))

        u_bar, _, psi_bar = compute_value_stats(batch, dist)
        h_diag, omega = compute_geometry_stats(dist, dist.target)
        precision = 1.0 / dist.covariance_diag()

        checks = []
        fd = np.zeros(d)
        for j in range(d):
            bump = np.zeros(d)
            bump[j] = FD_STEP
            fd[j] = (sampled(mu=dist.mu + bump) - sampled(mu=dist.mu - bump)) / (2 * FD_STEP)
        checks.append(("u_bar", precision * u_bar, fd.copy()))

        for j in range(d):
            bump = np.zeros(d)
            bump[j] = FD_STEP
            fd[j] = (sampled(theta=dist.theta + bump) - sampled(theta=dist.theta - bump)) / (
                2 * FD_STEP
            )
        checks.append(("psi_bar", psi_bar, fd.copy()))

        for j in range(d):
            bump = np.zeros(d)
            bump[j] = FD_STEP
            fd[j] = (
                kl_to_target(dist.with_params(theta=dist.theta + bump))
                - kl_to_target(dist.with_params(theta=dist.theta - bump))
            ) / (2 * FD_STEP)
        checks.append(("omega", omega, fd.copy()))

        for label, analytic, reference in checks:
            err = float(np.linalg.norm(analytic - reference)) / max(
                float(np.linalg.norm(reference)), 1e-6
            )
            report.fd_max_error = max(report.fd_max_error, err)
            if err > FD_RTOL:
                report.failures.append(f"fd-{label}[{i}]: relative error {err:.3e}")

        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        delta = FD_STEP * direction
        model = 0.25 * float(np.sum(delta**2 * h_diag))
        actual = kl_between(dist.with_params(theta=dist.theta + delta), dist)
        err = abs(model - actual) / max(actual, 1e-15)
        report.fd_max_error = max(report.fd_max_error, err)
        if err > FD_RTOL:
            report.failures.append(f"fd-h[{i}]: relative error {err:.3e}")

    return report


def _timing_batch(rng, dist, center, k):
    contexts = dist.mu + rng.standard_normal((k, dist.d)) * np.sqrt(dist.covariance_diag())
    values = 10.0 * np.exp(-0.5 * np.sum((contexts - center) ** 2, axis=1) / 4.0)
    rollouts = tuple(
        ContextRollout(context=c, value_estimate=float(v), episode_length=1, success=False)
        for c, v in zip(contexts, values)
    )
    return RolloutBatch(rollouts=rollouts, source_distribution=dist)


def run_timing_suite(seed: int, updates: int = 50, d: int = 3, k: int = 64) -> VerifyReport:
    """Wall-clock comparison: closed-form update vs the exact numerical
    solver on identical batches."""
    rng = np.random.default_rng(seed)
    target = TargetSpec(mu_tilde=np.full(d, 1.5), sigma_tilde_diag=np.full(d, 0.05))
    dist = ContextDistribution(mu=np.zeros(d), theta=np.full(d, 2.0), target=target)
    config = CurriculumConfig(epsilon=0.05, v_lower=5.0, k_contexts=k)
    center = np.zeros(d)

    closed_total = 0.0
    exact_total = 0.0
    for step in range(updates):
        batch = _timing_batch(rng, dist, center, k)

        start = time.perf_counter()
        new_dist, _ = update(dist, batch, target, config)
        closed_total += time.perf_counter() - start

        start = time.perf_counter()
        numerical_update(dist, batch, target, config, seed=seed + step)
        exact_total += time.perf_counter() - start

        dist = new_dist

    report = VerifyReport()
    report.closed_form_seconds = closed_total / updates
    report.exact_solver_seconds = exact_total / updates
    if report.speedup < 10.0:
        report.failures.append(
            f"timing: closed-form speedup {report.speedup:.1f}x below the 10x bound"
        )
    return report
