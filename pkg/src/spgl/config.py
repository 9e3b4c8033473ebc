"""Experiment configuration: a flat INI file with one section per module.

Sections: ``[experiment]`` (environment, curriculum mode, iteration budget),
``[environment]`` (per-environment constants, all optional), ``[target]`` and
``[initial]`` (context distribution parameters), ``[curriculum]``,
``[learner]`` and ``[evaluation]``.

Shipped presets live in ``spgl/presets``; the two point-mass setups and the
synthetic convergence run are directly runnable, while the presets whose
environments need external engines carry ``runnable = false`` and are
rejected at load time with a clear error.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .envs import PointMassEnv, PointMassParams, SyntheticEnv
from .gaussian import ContextDistribution, TargetSpec
from .learner import LearnerConfig
from .update import CurriculumConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "available_presets",
    "load_config",
    "preset_path",
]

CURRICULUM_MODES = ("default", "spgl", "numerical")
ENVIRONMENTS = ("point_mass", "synthetic", "lunar_lander", "ball_catching")


class ConfigError(ValueError):
    """Invalid or unusable experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training run needs."""

    name: str
    environment: str
    runnable: bool
    curriculum_mode: str
    iterations: int
    seed: int
    target: TargetSpec
    initial_mu: np.ndarray
    initial_theta: np.ndarray
    curriculum: CurriculumConfig
    learner: LearnerConfig
    eval_episodes: int
    environment_options: dict = field(default_factory=dict)

    def initial_distribution(self) -> ContextDistribution:
        return ContextDistribution(mu=self.initial_mu, theta=self.initial_theta, target=self.target)

    def make_environment(self):
        opts = dict(self.environment_options)
        if self.environment == "point_mass":
            param_fields = {f for f in PointMassParams.__dataclass_fields__}
            overrides = {k: v for k, v in opts.items() if k in param_fields}
            params = PointMassParams(**overrides) if overrides else PointMassParams()
            return PointMassEnv(params=params, context_visible=self.learner.context_visible)
        if self.environment == "synthetic":
            center = opts.get("difficulty_center", self.target.mu_tilde)
            return SyntheticEnv(difficulty_center=center, width=opts.get("width", 50.0))
        raise ConfigError(
            f"environment '{self.environment}' has no native implementation; "
            "this preset documents its published parameters only"
        )


def _parse_vector(raw: str, name: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in raw.replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"could not parse vector '{name}': {raw!r}") from exc


def _get(parser, section, option, cast, default=None, required=False):
    if not parser.has_option(section, option):
        if required:
            raise ConfigError(f"missing option [{section}] {option}")
        return default
    raw = parser.get(section, option)
    try:
        if cast is bool:
            return parser.getboolean(section, option)
        return cast(raw)
    except (ValueError, AttributeError) as exc:
        raise ConfigError(f"bad value for [{section}] {option}: {raw!r}") from exc


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc

    for section in ("experiment", "target", "initial", "curriculum"):
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}] in {path}")

    environment = _get(parser, "experiment", "environment", str, required=True)
    if environment not in ENVIRONMENTS:
        raise ConfigError(f"unknown environment '{environment}'")
    curriculum_mode = _get(parser, "experiment", "curriculum", str, default="spgl")
    if curriculum_mode not in CURRICULUM_MODES:
        raise ConfigError(f"unknown curriculum mode '{curriculum_mode}'")

    target = TargetSpec(
        mu_tilde=_parse_vector(parser.get("target", "mu"), "target.mu"),
        sigma_tilde_diag=_parse_vector(parser.get("target", "sigma"), "target.sigma"),
    )
    initial_mu = _parse_vector(parser.get("initial", "mu"), "initial.mu")
    initial_theta = _parse_vector(parser.get("initial", "theta"), "initial.theta")
    if initial_mu.shape != target.mu_tilde.shape or initial_theta.shape != target.mu_tilde.shape:
        raise ConfigError("initial and target context dimensions differ")

    curriculum = CurriculumConfig(
        epsilon=_get(parser, "curriculum", "epsilon", float, required=True),
        v_lower=_get(parser, "curriculum", "v_lower", float, required=True),
        k_contexts=_get(parser, "curriculum", "k_contexts", int, default=64),
        update_period=_get(parser, "curriculum", "update_period", int, default=1),
        theta_min=_get(parser, "curriculum", "theta_min", float, default=1e-6),
        standardize_values=_get(parser, "curriculum", "standardize_values", bool, default=False),
        combined_step=_get(parser, "curriculum", "combined_step", bool, default=False),
    )

    learner = LearnerConfig(
        gamma=_get(parser, "learner", "gamma", float, default=0.99),
        learning_rate=_get(parser, "learner", "learning_rate", float, default=0.05),
        iterations_per_update=_get(parser, "learner", "iterations_per_update", int, default=1),
        context_visible=_get(parser, "environment", "context_visible", bool, default=False),
    )

    env_options = {}
    if parser.has_section("environment"):
        for key, raw in parser.items("environment"):
            if key == "context_visible":
                continue
            if key == "difficulty_center":
                env_options[key] = _parse_vector(raw, "environment.difficulty_center")
            elif key == "horizon":
                env_options[key] = int(raw)
            else:
                env_options[key] = float(raw)

    config = ExperimentConfig(
        name=_get(parser, "experiment", "name", str, default=path.stem),
        environment=environment,
        runnable=_get(parser, "experiment", "runnable", bool, default=True),
        curriculum_mode=curriculum_mode,
        iterations=_get(parser, "experiment", "iterations", int, default=200),
        seed=_get(parser, "experiment", "seed", int, default=0),
        target=target,
        initial_mu=initial_mu,
        initial_theta=initial_theta,
        curriculum=curriculum,
        learner=learner,
        eval_episodes=_get(parser, "evaluation", "episodes", int, default=50)
        if parser.has_section("evaluation")
        else 50,
        environment_options=env_options,
    )
    if config.iterations < 1:
        raise ConfigError("iterations must be >= 1")
    try:
        config.initial_distribution()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def available_presets() -> list[str]:
    """Names of the shipped preset files."""
    pkg = resources.files("spgl") / "presets"
    return sorted(p.name for p in pkg.iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset (with or without extension)."""
    if not name.endswith(".ini"):
        name = f"{name}.ini"
    candidate = resources.files("spgl") / "presets" / name
    if not candidate.is_file():
        raise ConfigError(
            f"unknown preset '{name}'; available: {', '.join(available_presets())}"
        )
    return Path(str(candidate))
