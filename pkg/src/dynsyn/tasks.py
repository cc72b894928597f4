"""Reinforcement-learning tasks over the planar plant.

Observations share one layout across tasks:

    [ sim time (1) | q (n) | qdot (n) | force/f_max (m) | l_norm (m)
      | v_norm (m) | act (m) | task extras ]

so dim = 1 + 2n + 4m + extras. Reach appends target xy, tip xy, their
difference and its norm (7 extras); the oscillation task appends the
reference angle and the tracking error (2 extras). Muscle quantities are observed in normalized
units. Environments are pure state machines: a reset seed plus the action
sequence reproduces every return bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dynsyn.models import neutral_pose
from dynsyn.plant import IntegrationError, PlantModel, init_state
from dynsyn.plant import step as plant_step

__all__ = ["TaskConfig", "ReachEnv", "OscillateEnv", "reach_env", "oscillate_env"]


@dataclass(frozen=True)
class TaskConfig:
    """Episode layout and reward weights shared by the desk tasks."""

    episode_length: int = 150
    w_p: float = 1.0  # position / tracking reward weight
    w_a: float = 0.05  # activation-regularizer weight
    alive_bonus: float = 0.0
    target_bounds: tuple | None = None  # ((x_lo, x_hi), (y_lo, y_hi)); None: auto
    target_joint_span: float = 0.5  # joint-box fraction for default target draws
    seed: int = 0
    amplitude: float = 0.4  # oscillation reference amplitude, rad
    period: float = 1.0  # oscillation period, s

    def __post_init__(self):
        if self.episode_length < 1:
            raise ValueError("episode_length must be at least 1")
        if min(self.w_p, self.w_a) < 0 or self.alive_bonus < 0:
            raise ValueError("reward weights must be non-negative")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if not 0 < self.target_joint_span <= 1:
            raise ValueError("target_joint_span must lie in (0, 1]")


class _PlantEnv:
    """Shared plumbing: stepping, observation assembly, episode bookkeeping."""

    n_extras = 0

    def __init__(self, model: PlantModel, config: TaskConfig):
        self.model = model
        self.config = config
        self.dt = 0.01
        self._rng = np.random.default_rng(config.seed)
        self._q0 = neutral_pose(model)
        self._state = init_state(model, q=self._q0)
        self._steps = 0

    @property
    def n_muscles(self) -> int:
        return self.model.n_muscles

    @property
    def state(self):
        return self._state

    @property
    def obs_dim(self) -> int:
        return 1 + 2 * self.model.n_joints + 4 * self.model.n_muscles + self.n_extras

    def _base_obs(self, state) -> np.ndarray:
        return np.concatenate([
            [state.t],
            state.q,
            state.qdot,
            state.force / self.model.f_max,
            state.l_norm,
            state.v_norm,
            state.act,
            self._extras(state),
        ])

    def _extras(self, state) -> np.ndarray:
        return np.zeros(0)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = init_state(self.model, q=self._q0)
        self._steps = 0
        self._on_reset()
        return self._base_obs(self._state)

    def _on_reset(self) -> None:
        pass

    def step(self, ctrl):
        """Advance one control step: returns (obs, reward, done)."""
        ctrl = np.asarray(ctrl, dtype=float)
        try:
            self._state = plant_step(self.model, self._state, ctrl, self.dt)
        except IntegrationError:
            # a blown-up plant ends the episode; no reward for the bad step
            return self._base_obs(self._state), 0.0, True
        self._steps += 1
        reward = self._reward(self._state)
        done = self._steps >= self.config.episode_length
        return self._base_obs(self._state), reward, done

    def _reward(self, state) -> float:
        raise NotImplementedError


class ReachEnv(_PlantEnv):
    """Bring the last link's tip to a random target and hold it there.

    Per-step reward: w_p * exp(-10 sqrt(|target - tip|)) - w_a * |act| / m
    + alive bonus. By default targets are drawn as the tip position of a
    random configuration from a central fraction of the joint box, so every
    target is reachable by construction. An explicit spatial box can be
    configured instead; it must sit inside the reachable workspace, which is
    measured by a dense joint-space sweep at construction.
    """

    n_extras = 7

    def __init__(self, model: PlantModel, config: TaskConfig):
        super().__init__(model, config)
        self.workspace = self._reachable_box()
        if config.target_bounds is None:
            self.target_bounds = None
            mid = 0.5 * (model.limit_lo + model.limit_hi)
            half = (0.5 * config.target_joint_span
                    * (model.limit_hi - model.limit_lo))
            self._q_lo, self._q_hi = mid - half, mid + half
        else:
            tb = config.target_bounds
            (wx_lo, wx_hi), (wy_lo, wy_hi) = self.workspace
            if not (wx_lo <= tb[0][0] < tb[0][1] <= wx_hi
                    and wy_lo <= tb[1][0] < tb[1][1] <= wy_hi):
                raise ValueError(
                    f"target bounds {tb} outside reachable workspace {self.workspace}")
            self.target_bounds = (tuple(tb[0]), tuple(tb[1]))
        self.target = self.model.tip_position(self._q0)

    def _reachable_box(self, grid: int = 41):
        qs = [np.linspace(lo, hi, grid)
              for lo, hi in zip(self.model.limit_lo, self.model.limit_hi)]
        mesh = np.meshgrid(*qs, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        tips = np.array([self.model.tip_position(q) for q in pts])
        return ((float(tips[:, 0].min()), float(tips[:, 0].max())),
                (float(tips[:, 1].min()), float(tips[:, 1].max())))

    def _on_reset(self) -> None:
        if self.target_bounds is None:
            q_t = self._rng.uniform(self._q_lo, self._q_hi)
            self.target = self.model.tip_position(q_t)
        else:
            (x_lo, x_hi), (y_lo, y_hi) = self.target_bounds
            self.target = np.array([self._rng.uniform(x_lo, x_hi),
                                    self._rng.uniform(y_lo, y_hi)])

    def _extras(self, state) -> np.ndarray:
        tip = self.model.tip_position(state.q)
        err = self.target - tip
        return np.concatenate([self.target, tip, err, [np.linalg.norm(err)]])

    def _reward(self, state) -> float:
        tip = self.model.tip_position(state.q)
        dist = float(np.linalg.norm(self.target - tip))
        r_p = np.exp(-10.0 * np.sqrt(dist))
        r_a = float(np.linalg.norm(state.act)) / self.model.n_muscles
        return (self.config.w_p * r_p - self.config.w_a * r_a
                + self.config.alive_bonus)


class OscillateEnv(_PlantEnv):
    """Track a sinusoidal reference with the first joint.

    Per-step reward: w_p * exp(-(q0 - A cos(2 pi t / period))^2)
    - w_a * |act| / m + alive bonus.
    """

    n_extras = 2

    def reference(self, t: float) -> float:
        return self.config.amplitude * np.cos(2.0 * np.pi * t / self.config.period)

    def _extras(self, state) -> np.ndarray:
        ref = self.reference(state.t)
        return np.array([ref, state.q[0] - ref])

    def _reward(self, state) -> float:
        err = state.q[0] - self.reference(state.t)
        r_a = float(np.linalg.norm(state.act)) / self.model.n_muscles
        return (self.config.w_p * np.exp(-err * err)
                - self.config.w_a * r_a + self.config.alive_bonus)


def reach_env(model: PlantModel, config: TaskConfig | None = None) -> ReachEnv:
    """Build the reach task over a model with a designated end effector."""
    return ReachEnv(model, config or TaskConfig())


def oscillate_env(model: PlantModel, config: TaskConfig | None = None) -> OscillateEnv:
    """Build the joint-tracking oscillation task."""
    return OscillateEnv(model, config or TaskConfig())
