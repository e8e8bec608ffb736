"""Shared environment machinery: 10 Hz control, kinematic gripper,
sparse binary success rewards, automatic resets via reset(seed).

All dynamics are pure float64 numpy, so trajectories are bit-deterministic
given (seed, action sequence).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import substream

DT = 0.1  # 10 Hz control


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    episode_limit: int
    max_speed: float  # velocity command scale, arena units / s
    dt: float = DT


class Env:
    """Base class; subclasses implement _reset_state, _step_dynamics,
    success_classifier, observe, and frame_record."""

    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._done = True

    def reset(self, seed: int) -> np.ndarray:
        rng = substream(int(seed), "env-reset", self.spec.name)
        self._reset_state(rng)
        self._t = 0
        self._done = False
        return self.observe()

    def step(self, action: np.ndarray):
        if self._done:
            raise EnvError("step() after episode end; call reset()")
        action = np.clip(np.asarray(action, dtype=float).reshape(-1), -1.0, 1.0)
        if action.shape != (self.spec.action_dim,):
            raise EnvError(f"action shape {action.shape} != ({self.spec.action_dim},)")
        self._step_dynamics(action)
        self._t += 1
        reward = float(self.success_classifier())
        self._done = reward > 0 or self._t >= self.spec.episode_limit
        return self.observe(), reward, self._done

    @property
    def steps_taken(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    # subclass hooks -------------------------------------------------------
    def _reset_state(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _step_dynamics(self, action: np.ndarray) -> None:
        raise NotImplementedError

    def success_classifier(self) -> int:
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    def frame_record(self) -> dict:
        raise NotImplementedError

    def expert_action(self) -> np.ndarray:
        raise NotImplementedError
