"""Actor: steps the environment on chunks served by the learner, applies
live intervention overrides mid-chunk, and pushes the merged transitions
back.

The intervention source is pluggable: the operator console over the UI
socket, or the scripted expert standing in for a human in automated runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..replay import ChunkTransition, merge_intervention
from ..rng import derive_seed


class NoIntervention:
    def engaged_action(self, env, policy_action=None):
        return None

    def episode_result(self, success: bool) -> None:
        pass


@dataclass
class ScriptedIntervention:
    """Expert stand-in for the operator.

    Engages when the policy's action strays from what the expert would do,
    and stops engaging once recent episodes mostly succeed (the operator
    watches performance and lets go).
    """

    deviation_threshold: float = 0.6
    disengage_success_rate: float = 0.9
    window: int = 20
    min_hold_steps: int = 2
    _recent: list = field(default_factory=list)
    _hold: int = 0

    def rolling_success(self) -> float:
        if not self._recent:
            return 0.0
        return sum(self._recent) / len(self._recent)

    def episode_result(self, success: bool) -> None:
        self._recent.append(1.0 if success else 0.0)
        if len(self._recent) > self.window:
            self._recent.pop(0)

    def engaged_action(self, env, policy_action: np.ndarray | None = None):
        if self.rolling_success() >= self.disengage_success_rate:
            self._hold = 0
            return None
        expert = env.expert_action()
        if policy_action is None:
            return None
        deviation = float(np.max(np.abs(np.asarray(policy_action) - expert)))
        if deviation > self.deviation_threshold:
            self._hold = self.min_hold_steps
            return expert
        if self._hold > 0:
            self._hold -= 1
            return expert
        return None


class QueueIntervention:
    """Live operator commands delivered through the UI bridge."""

    def __init__(self, bus):
        self.bus = bus

    def engaged_action(self, env, policy_action=None):
        cmd = self.bus.current_command()
        if cmd is None or not cmd.engaged:
            return None
        return np.clip(np.asarray(cmd.command, dtype=float), -1.0, 1.0)

    def episode_result(self, success: bool) -> None:
        pass


@dataclass
class EpisodeRecord:
    episode: int
    env_steps: int
    steps: int
    success: bool
    intervention_steps: int
    policy_version: int

    @property
    def intervention_rate(self) -> float:
        return self.intervention_steps / max(self.steps, 1)

    def record(self, dt: float) -> dict:
        return {
            "episode": self.episode,
            "env_step": self.env_steps,
            "steps": self.steps,
            "time_s": self.steps * dt,
            "success": int(self.success),
            "intervention_rate": self.intervention_rate,
            "policy_version": self.policy_version,
        }


class Actor:
    def __init__(self, env, transport, execute: int, intervention=None, ui_hook=None, seed: int = 0):
        self.env = env
        self.transport = transport
        self.execute = execute
        self.intervention = intervention or NoIntervention()
        self.ui_hook = ui_hook  # callable(env, episode, step, k, C, reward, version, intervening)
        self.seed = seed
        self.total_env_steps = 0
        self.episodes_done = 0

    def run_episode(self) -> EpisodeRecord:
        env = self.env
        a_dim = env.spec.action_dim
        ep = self.episodes_done
        obs = env.reset(seed=derive_seed(self.seed, "actor-reset", ep))
        done = False
        success = False
        intervention_steps = 0
        steps = 0
        version = 0
        while not done:
            chunk, version = self.transport.get_chunk(obs)
            overrides = []
            rewards = []
            executed = np.array(chunk[: self.execute * a_dim], dtype=float, copy=True)
            k = 0
            for k in range(self.execute):
                policy_action = chunk[k * a_dim : (k + 1) * a_dim]
                override = self.intervention.engaged_action(env, policy_action)
                intervening = override is not None
                if intervening:
                    action = np.clip(np.asarray(override, float), -1.0, 1.0)
                    overrides.append((k, action))
                    intervention_steps += 1
                else:
                    action = policy_action
                next_obs, r, done = env.step(action)
                rewards.append(r)
                steps += 1
                self.total_env_steps += 1
                if self.ui_hook is not None:
                    self.ui_hook(env, ep, steps, k, self.execute, r > 0, version, intervening)
                if done:
                    success = r > 0
                    break
            merged, mask = merge_intervention(executed, overrides, a_dim, self.execute)
            if overrides:
                self.transport.notify_intervention(overrides)
            transition = ChunkTransition(
                obs=np.asarray(obs, float),
                chunk=merged,
                rewards=np.asarray(rewards, float),
                next_obs=np.asarray(next_obs, float),
                done=done,
                mask=mask,
                source="intervention" if overrides else "autonomous",
            )
            self.transport.push_transition(transition)
            obs = next_obs
        self.episodes_done += 1
        self.intervention.episode_result(success)
        return EpisodeRecord(
            episode=ep,
            env_steps=self.total_env_steps,
            steps=steps,
            success=success,
            intervention_steps=intervention_steps,
            policy_version=version,
        )
