"""Self-paced Gaussian curriculum learning for contextual tasks.

The package provides closed-form trust-region updates of a Gaussian
context-sampling distribution, an independent numerical oracle for
verification and baseline comparison, native desk-scale environments, a
minimal episodic learner, and a CLI training harness.
"""

from .envs import PointMassEnv, PointMassParams, SyntheticEnv, synthetic_value
from .gaussian import (
    ContextDistribution,
    TargetSpec,
    importance_ratio,
    kl_between,
    kl_to_target,
    log_density,
    sample,
)
from .learner import LearnerConfig, PolicyParameters, improve, rollout
from .oracle import LinearizedSubproblem, solve_exact_sampled, solve_numeric
from .stats import (
    ContextRollout,
    CurriculumStats,
    RolloutBatch,
    compute_geometry_stats,
    compute_value_stats,
)
from .update import (
    CurriculumConfig,
    DegenerateUpdate,
    InfeasiblePerformanceConstraint,
    MultiplierSolution,
    UpdateReport,
    convergence_mu_step,
    convergence_theta_step,
    performance_step,
    should_run_performance_step,
    solve_mu_multipliers,
    solve_theta_multipliers,
    update,
)

__version__ = "0.1.0"
