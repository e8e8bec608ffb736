"""Precision task: drive the gripper tip down a narrow slot.

A wall block spans the arena at slot height with a 0.03-wide notch at a
randomized position.  Descending requires alignment within the notch;
success requires the tip deep in the slot and centered within 0.01.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import DT, Env, EnvSpec


@dataclass
class PointInsertParams:
    slot_width: float = 0.03
    slot_tolerance: float = 0.01   # |x - slot_x| for success
    wall_y: float = 0.25           # top of the wall block
    success_y: float = 0.05        # tip depth for success
    slot_x_range: tuple = (0.3, 0.7)
    start_x_range: tuple = (0.2, 0.8)
    start_y_range: tuple = (0.6, 0.9)
    max_speed: float = 0.6
    episode_limit: int = 100


class PointInsertEnv(Env):
    def __init__(self, params: PointInsertParams | None = None):
        super().__init__()
        self.params = params or PointInsertParams()
        self.spec = EnvSpec(
            name="pointinsert",
            obs_dim=5,
            action_dim=2,
            episode_limit=self.params.episode_limit,
            max_speed=self.params.max_speed,
        )
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.slot_x = 0.5

    def _reset_state(self, rng):
        p = self.params
        self.slot_x = float(rng.uniform(*p.slot_x_range))
        self.pos = np.array([rng.uniform(*p.start_x_range), rng.uniform(*p.start_y_range)])
        self.vel = np.zeros(2)

    def _step_dynamics(self, action):
        p = self.params
        self.vel = action * self.spec.max_speed
        new = self.pos + self.vel * DT
        new = np.clip(new, 0.0, 1.0)
        half = p.slot_width / 2.0
        inside_slot_x = abs(new[0] - self.slot_x) <= half
        if new[1] < p.wall_y:
            if self.pos[1] >= p.wall_y and not inside_slot_x:
                # blocked by the wall top; slide along it
                new[1] = p.wall_y
                self.vel[1] = 0.0
            elif self.pos[1] < p.wall_y or inside_slot_x:
                # inside the channel: walls constrain x
                if self.pos[1] < p.wall_y:
                    lo, hi = self.slot_x - half, self.slot_x + half
                    if new[0] < lo:
                        new[0] = lo
                        self.vel[0] = 0.0
                    elif new[0] > hi:
                        new[0] = hi
                        self.vel[0] = 0.0
        self.pos = new

    def success_classifier(self) -> int:
        p = self.params
        ok = self.pos[1] <= p.success_y and abs(self.pos[0] - self.slot_x) <= p.slot_tolerance
        return int(ok)

    def observe(self):
        return np.array([self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.slot_x])

    def frame_record(self):
        return {
            "task": "pointinsert",
            "gripper": [float(self.pos[0]), float(self.pos[1])],
            "objects": {"slot": [float(self.slot_x), float(self.params.wall_y)]},
            "meta": {"slot_width": self.params.slot_width},
        }

    def expert_action(self):
        """P-controller: hover above the slot, center, then descend."""
        p = self.params
        hover_y = p.wall_y + 0.08
        dx = self.slot_x - self.pos[0]
        if self.pos[1] > hover_y + 0.02:
            wp = np.array([self.slot_x, hover_y])
        elif abs(dx) > 0.004 and self.pos[1] >= p.wall_y:
            wp = np.array([self.slot_x, hover_y])
        else:
            wp = np.array([self.slot_x, 0.0])
        delta = wp - self.pos
        cmd = delta * 6.0 / self.spec.max_speed
        return np.clip(cmd, -1.0, 1.0)
