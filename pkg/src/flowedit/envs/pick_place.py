"""Randomization task: grasp a cube anywhere on the surface and lift it.

Side view; ground at y=0, gravity acts on the free cube.  The gripper is a
kinematic point with an aperture channel; holding the cube blocks the
aperture from closing fully, so a successful lift shows the "partially
closed above the height threshold" signature the classifier keys on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import DT, Env, EnvSpec


@dataclass
class PickPlaceParams:
    object_x_range: tuple = (0.1, 0.9)  # full-surface randomization
    start_x_range: tuple = (0.2, 0.8)
    start_y_range: tuple = (0.4, 0.7)
    object_radius: float = 0.02
    grasp_radius: float = 0.035
    grasp_aperture: float = 0.5     # must be at or below this to grab
    held_aperture_floor: float = 0.3  # cube blocks further closing
    release_aperture: float = 0.6
    lift_threshold: float = 0.2
    aperture_rate: float = 2.0      # full range per 0.5 s
    gravity: float = 2.0
    max_speed: float = 0.6
    episode_limit: int = 100


class PickPlaceEnv(Env):
    def __init__(self, params: PickPlaceParams | None = None):
        super().__init__()
        self.params = params or PickPlaceParams()
        self.spec = EnvSpec(
            name="pickplace",
            obs_dim=9,
            action_dim=3,
            episode_limit=self.params.episode_limit,
            max_speed=self.params.max_speed,
        )
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.aperture = 1.0
        self.obj_pos = np.zeros(2)
        self.obj_vel = np.zeros(2)
        self.held = False

    def _reset_state(self, rng):
        p = self.params
        self.pos = np.array([rng.uniform(*p.start_x_range), rng.uniform(*p.start_y_range)])
        self.vel = np.zeros(2)
        self.aperture = 1.0
        self.obj_pos = np.array([rng.uniform(*p.object_x_range), p.object_radius])
        self.obj_vel = np.zeros(2)
        self.held = False

    def _step_dynamics(self, action):
        p = self.params
        self.vel = action[:2] * self.spec.max_speed
        self.pos = np.clip(self.pos + self.vel * DT, 0.0, 1.0)
        floor = p.held_aperture_floor if self.held else 0.0
        self.aperture = float(np.clip(self.aperture + action[2] * p.aperture_rate * DT, floor, 1.0))

        if self.held:
            if self.aperture >= p.release_aperture:
                self.held = False
                self.obj_vel = self.vel.copy()
            else:
                self.obj_pos = self.pos.copy()
                self.obj_vel = self.vel.copy()
        if not self.held:
            grounded = self.obj_pos[1] <= p.object_radius + 1e-12
            if grounded and abs(self.obj_vel[1]) < 1e-9:
                self.obj_vel = np.zeros(2)  # resting: supported by the ground
            else:
                self.obj_vel = self.obj_vel + np.array([0.0, -p.gravity]) * DT
                self.obj_pos = self.obj_pos + self.obj_vel * DT
                if self.obj_pos[1] <= p.object_radius:
                    self.obj_pos[1] = p.object_radius
                    self.obj_vel = np.zeros(2)
            close_enough = np.linalg.norm(self.pos - self.obj_pos) <= p.grasp_radius
            if close_enough and self.aperture <= p.grasp_aperture:
                self.held = True
                self.aperture = max(self.aperture, p.held_aperture_floor)
                self.obj_pos = self.pos.copy()
                self.obj_vel = self.vel.copy()

    def success_classifier(self) -> int:
        p = self.params
        partially_closed = 0.05 <= self.aperture <= 0.55
        return int(self.obj_pos[1] >= p.lift_threshold and partially_closed)

    def observe(self):
        return np.array(
            [
                self.pos[0],
                self.pos[1],
                self.vel[0],
                self.vel[1],
                self.aperture,
                self.obj_pos[0],
                self.obj_pos[1],
                self.obj_vel[0],
                self.obj_vel[1],
            ]
        )

    def frame_record(self):
        return {
            "task": "pickplace",
            "gripper": [float(self.pos[0]), float(self.pos[1])],
            "objects": {"cube": [float(self.obj_pos[0]), float(self.obj_pos[1])]},
            "meta": {"aperture": float(self.aperture), "held": bool(self.held)},
        }

    def expert_action(self):
        """Waypoints: hover over the cube, descend, close, lift."""
        p = self.params
        if self.held:
            wp = np.array([self.pos[0], p.lift_threshold + 0.15])
            grip = 0.0 if self.aperture <= 0.45 else -1.0
        else:
            above = np.array([self.obj_pos[0], self.obj_pos[1] + 0.12])
            at = self.obj_pos
            if abs(self.pos[0] - self.obj_pos[0]) > 0.01 and self.pos[1] < self.obj_pos[1] + 0.08:
                wp, grip = above, 1.0
            elif np.linalg.norm(self.pos - at) > p.grasp_radius * 0.6:
                wp = above if abs(self.pos[0] - self.obj_pos[0]) > 0.02 else at
                grip = 1.0 if self.aperture < 0.9 else 0.0
            else:
                wp, grip = at, -1.0
        delta = (wp - self.pos) * 6.0 / self.spec.max_speed
        return np.clip(np.array([delta[0], delta[1], grip]), -1.0, 1.0)
