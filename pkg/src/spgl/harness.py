"""Training harness: the full loop of context sampling, rollouts, policy
improvement and curriculum updates, plus evaluation, multi-seed aggregation
and the randomized verification entry point.

Determinism contract: a (config, seed) pair fixes every random draw, the
iteration order and the CSV float formatting, so repeated runs produce
byte-identical output files.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .config import ConfigError, ExperimentConfig
from .gaussian import ContextDistribution, kl_to_target, sample
from .learner import LearnerConfig, collect_rollouts, improve, init_policy
from .oracle import numerical_update
from .stats import RolloutBatch
from .update import update
from .verification import VerifyReport, run_fd_suite, run_oracle_suite, run_timing_suite

__all__ = [
    "EvalResult",
    "IterationRecord",
    "TrainingResult",
    "evaluate",
    "records_to_csv",
    "run_multi_seed",
    "run_training",
    "verify",
]

CSV_FLOAT_FORMAT = ".9g"


@dataclass(frozen=True)
class IterationRecord:
    """One row of the training curve, emitted per curriculum update."""

    iteration: int
    mean_return: float
    success_rate: float
    kl_to_target: float
    kl_step: float
    step_kind: str
    active_case: str
    mu: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class TrainingResult:
    records: tuple
    policy: object
    distribution: ContextDistribution
    degenerate_updates: int


@dataclass(frozen=True)
class EvalResult:
    mean_return: float
    success_rate: float
    return_se: float
    success_se: float


def _fmt(value: float) -> str:
    return format(float(value), CSV_FLOAT_FORMAT)


def records_to_csv(records, d: int) -> str:
    """Render records with the fixed column order and 9-significant-digit
    floats; the byte-identical determinism contract hangs on this."""
    header = ["iteration", "mean_return", "success_rate", "kl_to_target", "kl_step", "step_kind", "active_case"]
    header += [f"mu_{j}" for j in range(d)] + [f"theta_{j}" for j in range(d)]
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for r in records:
        row = [
            str(r.iteration),
            _fmt(r.mean_return),
            _fmt(r.success_rate),
            _fmt(r.kl_to_target),
            _fmt(r.kl_step),
            r.step_kind,
            r.active_case,
        ]
        row += [_fmt(v) for v in r.mu] + [_fmt(v) for v in r.theta]
        out.write(",".join(row) + "\n")
    return out.getvalue()


def run_training(
    config: ExperimentConfig,
    seed: int,
    curriculum_mode: str | None = None,
    progress=None,
) -> TrainingResult:
    """Run one training loop and return the per-update records.

    ``curriculum_mode`` overrides the config's mode: ``default`` always
    samples from the target and never updates, ``spgl`` applies the
    closed-form update, ``numerical`` the exact-solver baseline.
    """
    if not config.runnable:
        raise ConfigError(
            f"preset '{config.name}' is not runnable in this build "
            "(its environment needs an external engine)"
        )
    mode = curriculum_mode or config.curriculum_mode
    env = config.make_environment()
    if env.context_dim != config.target.d:
        raise ConfigError("environment context dimension does not match the target spec")

    target = config.target
    dist = (
        ContextDistribution.at_target(target)
        if mode == "default"
        else config.initial_distribution()
    )
    policy = init_policy(env.observation_dim, env.action_dim)
    context_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

    records = []
    degenerate = 0
    for i in range(1, config.iterations + 1):
        contexts = sample(dist, context_rng, config.curriculum.k_contexts)
        rollouts = collect_rollouts(policy, env, contexts, config.learner, seed, i)
        batch = RolloutBatch(rollouts=tuple(rollouts), source_distribution=dist)
        policy = improve(policy, batch, config.learner)

        if i % config.curriculum.update_period == 0:
            if mode == "spgl":
                dist, report = update(dist, batch, target, config.curriculum)
                step_kind, active_case, kl_step = report.kind, report.active_case, report.kl_step
                degenerate += int(report.degenerate)
            elif mode == "numerical":
                dist, report = numerical_update(
                    dist, batch, target, config.curriculum, seed=seed + i
                )
                step_kind, active_case, kl_step = report.kind, report.active_case, report.kl_step
            else:
                step_kind, active_case, kl_step = "default", "-", 0.0
            record = IterationRecord(
                iteration=i,
                mean_return=float(np.mean(batch.values())),
                success_rate=batch.success_rate(),
                kl_to_target=kl_to_target(dist),
                kl_step=kl_step,
                step_kind=step_kind,
                active_case=active_case,
                mu=np.array(dist.mu),
                theta=np.array(dist.theta),
            )
            records.append(record)
            if progress is not None:
                progress(record)

    return TrainingResult(
        records=tuple(records), policy=policy, distribution=dist, degenerate_updates=degenerate
    )


def evaluate(
    policy,
    target,
    env,
    n_episodes: int,
    rng: np.random.Generator,
    learner_config: LearnerConfig | None = None,
    deterministic: bool = True,
) -> EvalResult:
    """Mean return and success rate (percent) over episodes with contexts
    drawn from the target distribution, with standard errors.

    Evaluation executes the mean action by default; pass
    ``deterministic=False`` to keep the exploration noise.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    learner_config = learner_config or LearnerConfig()
    target_dist = ContextDistribution.at_target(target)
    contexts = sample(target_dist, rng, n_episodes)
    eval_seed = int(rng.integers(2**31))
    rollouts = collect_rollouts(
        policy, env, contexts, learner_config, eval_seed, 0, deterministic=deterministic
    )
    returns = np.array([r.value_estimate for r in rollouts])
    successes = np.array([100.0 * r.success for r in rollouts])
    if n_episodes == 1:
        warnings.warn("single-episode evaluation; standard errors are zero", RuntimeWarning)
        return EvalResult(float(returns[0]), float(successes[0]), 0.0, 0.0)
    return EvalResult(
        mean_return=float(np.mean(returns)),
        success_rate=float(np.mean(successes)),
        return_se=float(np.std(returns, ddof=1) / math.sqrt(n_episodes)),
        success_se=float(np.std(successes, ddof=1) / math.sqrt(n_episodes)),
    )


def evaluate_run(config: ExperimentConfig, result: TrainingResult, seed: int) -> EvalResult:
    """Final evaluation of a finished run, on the target distribution."""
    env = config.make_environment()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_000]))
    return evaluate(result.policy, config.target, env, config.eval_episodes, rng, config.learner)


@dataclass(frozen=True)
class ModeSummary:
    curriculum: str
    return_mean: float
    return_se: float
    return_p_value: float | None
    success_mean: float
    success_se: float
    final_kl_median: float


def run_multi_seed(
    config: ExperimentConfig, seeds, modes=("default", "spgl"), progress=None
) -> tuple[list[ModeSummary], dict]:
    """Train every curriculum mode on every seed and aggregate final
    evaluations, with Welch's t-test p-values against the spgl row
    (descriptive, not gating)."""
    per_mode_returns = {}
    per_mode_success = {}
    per_mode_kl = {}
    all_records = {}
    for mode in modes:
        returns, successes, kls = [], [], []
        for seed in seeds:
            result = run_training(config, seed, curriculum_mode=mode, progress=progress)
            ev = evaluate_run(config, result, seed)
            returns.append(ev.mean_return)
            successes.append(ev.success_rate)
            kls.append(result.records[-1].kl_to_target if result.records else 0.0)
            all_records[(mode, seed)] = result.records
        per_mode_returns[mode] = returns
        per_mode_success[mode] = successes
        per_mode_kl[mode] = kls

    summaries = []
    spgl_returns = per_mode_returns.get("spgl")
    for mode in modes:
        returns = np.array(per_mode_returns[mode])
        successes = np.array(per_mode_success[mode])
        p_value = None
        if mode != "spgl" and spgl_returns is not None and len(seeds) > 1:
            p_value = float(
                scipy_stats.ttest_ind(returns, np.array(spgl_returns), equal_var=False).pvalue
            )
        se = float(np.std(returns, ddof=1) / math.sqrt(len(returns))) if len(returns) > 1 else 0.0
        sse = (
            float(np.std(successes, ddof=1) / math.sqrt(len(successes)))
            if len(successes) > 1
            else 0.0
        )
        summaries.append(
            ModeSummary(
                curriculum=mode,
                return_mean=float(np.mean(returns)),
                return_se=se,
                return_p_value=p_value,
                success_mean=float(np.mean(successes)),
                success_se=sse,
                final_kl_median=float(np.median(per_mode_kl[mode])),
            )
        )
    return summaries, all_records


def summary_to_csv(summaries) -> str:
    out = io.StringIO()
    out.write("curriculum,return_mean,return_se,return_p_value,success_mean,success_se,final_kl_median\n")
    for s in summaries:
        p = "" if s.return_p_value is None else _fmt(s.return_p_value)
        out.write(
            f"{s.curriculum},{_fmt(s.return_mean)},{_fmt(s.return_se)},{p},"
            f"{_fmt(s.success_mean)},{_fmt(s.success_se)},{_fmt(s.final_kl_median)}\n"
        )
    return out.getvalue()


def verify(
    seed: int,
    instance_count: int = 100,
    perturb: float = 0.0,
    include_timing: bool = True,
    timing_updates: int = 50,
) -> VerifyReport:
    """Run the randomized verification suites.

    Closed-form solutions are compared against the dual-bisection oracle and
    the gradient statistics against finite differences; with timing enabled
    the closed-form update is raced against the exact numerical solver.  A
    nonzero ``perturb`` injects an artificial error into the closed forms so
    the suite's sensitivity can be demonstrated.
    """
    if instance_count < 1:
        raise ValueError("instance_count must be >= 1")
    report = run_oracle_suite(seed, instance_count, perturb=perturb)
    report.merge(run_fd_suite(seed + 1, instance_count))
    if include_timing:
        report.merge(run_timing_suite(seed + 2, updates=timing_updates))
    return report
