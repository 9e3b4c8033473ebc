"""Native contextual environments.

Two environments live here:

* :class:`PointMassEnv` -- a point mass steered by force commands from a fixed
  start toward a fixed goal, through a gate in a wall.  The context vector
  ``[gate_position, gate_width, friction]`` parameterizes the wall opening and
  the floor drag.  Crashing into the wall ends the episode; reaching the goal
  pays a bonus.
* :class:`SyntheticEnv` -- an analytic single-shot environment whose episode
  return is a known function of the context alone.  It removes policy noise
  entirely, which makes curriculum behaviour observable in isolation.

All dynamics are pure functions of (state, action, context); the batched
array API and the scalar API share one code path, so rollouts vectorized
across contexts are bit-identical to sequential ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EnvState",
    "PointMassEnv",
    "PointMassParams",
    "StepOutcome",
    "SyntheticEnv",
    "synthetic_value",
]


@dataclass(frozen=True)
class EnvState:
    """Kinematic state of the point mass."""

    position: np.ndarray
    velocity: np.ndarray
    time_step: int


@dataclass(frozen=True)
class StepOutcome:
    """Result of one environment transition."""

    state: EnvState
    reward: float
    terminated: bool
    success: bool

    def __post_init__(self):
        if self.success and not self.terminated:
            raise ValueError("success implies terminated")


@dataclass(frozen=True)
class PointMassParams:
    """Physical constants of the point-mass task.

    The reward is ``exp(-distance_to_goal) - action_cost * |a|^2`` per step,
    plus a bonus on reaching the goal and a penalty on hitting the wall.
    """

    dt: float = 0.05
    horizon: int = 100
    arena_half_width: float = 4.0
    start: tuple = (0.0, 3.0)
    goal: tuple = (0.0, -3.0)
    action_limit: float = 10.0
    success_radius: float = 0.25
    success_bonus: float = 10.0
    crash_penalty: float = -1.0
    action_cost: float = 1e-3
    min_gate_width: float = 0.05


class PointMassEnv:
    """Point mass behind a gated wall; context = [gate x, gate width, friction].

    The wall sits at ``y = 0`` across the whole arena except the open gate
    interval.  Crossing the wall plane outside the gate terminates the episode
    with a penalty.  The start and goal are context-independent.
    """

    context_dim = 3
    action_dim = 2
    action_independent = False

    def __init__(self, params: PointMassParams | None = None, context_visible: bool = False):
        self.params = params or PointMassParams()
        self.context_visible = bool(context_visible)

    @property
    def observation_dim(self) -> int:
        return 4 + (self.context_dim if self.context_visible else 0)

    @property
    def horizon(self) -> int:
        return self.params.horizon

    def clamp_contexts(self, contexts: np.ndarray, warn: bool = True) -> np.ndarray:
        """Clamp raw context draws to physically meaningful values."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        if contexts.shape[-1] != self.context_dim:
            raise ValueError("point-mass contexts have three dimensions")
        clamped = contexts.copy()
        clamped[:, 1] = np.maximum(clamped[:, 1], self.params.min_gate_width)
        clamped[:, 2] = np.maximum(clamped[:, 2], 0.0)
        if warn and not np.array_equal(clamped, contexts):
            warnings.warn(
                "context clamped to physical bounds (gate width, friction)",
                RuntimeWarning,
                stacklevel=2,
            )
        return clamped

    # -- scalar API -------------------------------------------------------

    def reset(self, context: np.ndarray, rng=None) -> EnvState:
        """Start state; identical for every context (the start is fixed)."""
        self.clamp_contexts(context)
        return EnvState(
            position=np.array(self.params.start, dtype=float),
            velocity=np.zeros(2),
            time_step=0,
        )

    def step(self, state: EnvState, action: np.ndarray, context: np.ndarray) -> StepOutcome:
        """One transition; all inputs are sanitized rather than rejected."""
        context = self.clamp_contexts(context, warn=False)
        pos = state.position[None, :].copy()
        vel = state.velocity[None, :].copy()
        action = np.asarray(action, dtype=float)[None, :]
        t = np.array([state.time_step])
        new_pos, new_vel, reward, terminated, success = self._step_arrays(
            pos, vel, action, context, t
        )
        new_state = EnvState(position=new_pos[0], velocity=new_vel[0], time_step=state.time_step + 1)
        return StepOutcome(
            state=new_state,
            reward=float(reward[0]),
            terminated=bool(terminated[0]),
            success=bool(success[0]),
        )

    def observe(self, state: EnvState, context: np.ndarray) -> np.ndarray:
        return self.observe_arrays(
            state.position[None, :], state.velocity[None, :], np.atleast_2d(context)
        )[0]

    # -- array API (one code path shared with the scalar wrappers) --------

    def observe_arrays(self, positions, velocities, contexts) -> np.ndarray:
        """Policy observations, normalized to O(1) ranges."""
        parts = [positions / self.params.arena_half_width, velocities / 5.0]
        if self.context_visible:
            parts.append(np.atleast_2d(contexts) / np.array([4.0, 4.0, 2.0]))
        return np.concatenate(parts, axis=1)

    def _step_arrays(self, pos, vel, actions, contexts, t):
        p = self.params
        actions = np.clip(actions, -p.action_limit, p.action_limit)
        friction = contexts[:, 2:3]
        new_vel = vel + p.dt * (actions - friction * vel)
        new_pos = pos + p.dt * new_vel

        # wall crossing at y = 0, interpolated along the step segment
        y_old, y_new = pos[:, 1], new_pos[:, 1]
        crossed = (y_old > 0.0) != (y_new > 0.0)
        denom = np.where(crossed, y_old - y_new, 1.0)
        x_cross = pos[:, 0] + (new_pos[:, 0] - pos[:, 0]) * (y_old / denom)
        in_gate = np.abs(x_cross - contexts[:, 0]) <= 0.5 * contexts[:, 1]
        crash = crossed & ~in_gate

        # arena walls only stop motion, they do not end the episode
        limit = p.arena_half_width
        clipped = np.clip(new_pos, -limit, limit)
        new_vel = np.where(new_pos == clipped, new_vel, 0.0)
        new_pos = clipped
        new_pos[crash, 0] = x_cross[crash]
        new_pos[crash, 1] = 0.0
        new_vel[crash] = 0.0

        goal = np.array(p.goal)
        dist = np.sqrt(np.sum((new_pos - goal) ** 2, axis=1))
        success = (dist < p.success_radius) & ~crash
        reward = (
            np.exp(-dist)
            - p.action_cost * np.sum(actions**2, axis=1)
            + np.where(success, p.success_bonus, 0.0)
            + np.where(crash, p.crash_penalty, 0.0)
        )
        terminated = crash | success | (t + 1 >= p.horizon)
        return new_pos, new_vel, reward, terminated, success


def synthetic_value(context, difficulty_center, width: float, peak: float = 10.0) -> float:
    """Deterministic episode return of the synthetic environment:
    ``peak * exp(-|c - center|^2 / (2 width^2))``."""
    context = np.asarray(context, dtype=float)
    center = np.asarray(difficulty_center, dtype=float)
    if context.shape[-1] != center.shape[-1]:
        raise ValueError("context dimension mismatch")
    if width <= 0.0:
        raise ValueError("width must be positive")
    gap = np.sum((context - center) ** 2, axis=-1)
    return peak * np.exp(-gap / (2.0 * width**2))


class SyntheticEnv:
    """Analytic environment: the episode return is a known bump function of
    the context, independent of any action.  An episode counts as a success
    when its return reaches half the peak."""

    action_independent = True
    action_dim = 2
    horizon = 1

    def __init__(self, difficulty_center, width: float, peak: float = 10.0):
        self.difficulty_center = np.asarray(difficulty_center, dtype=float)
        if self.difficulty_center.ndim != 1:
            raise ValueError("difficulty_center must be a vector")
        if width <= 0.0:
            raise ValueError("width must be positive")
        self.width = float(width)
        self.peak = float(peak)

    @property
    def context_dim(self) -> int:
        return self.difficulty_center.size

    @property
    def observation_dim(self) -> int:
        # no interactive state; a constant placeholder observation
        return 1

    @property
    def success_threshold(self) -> float:
        return 0.5 * self.peak

    def value(self, context) -> float:
        return synthetic_value(context, self.difficulty_center, self.width, self.peak)
