"""Dynamic task: strike the cue ball so the target ball drops in the
corner pocket.

Point-mass balls with circle colliders, restitution 0.9, and linear
friction (exponential speed decay, so speed falls linearly with distance
traveled).  Success needs three things at once: target ball pocketed, cue
ball not pocketed, and the striker never having touched the target ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import DT, Env, EnvSpec


@dataclass
class BilliardsParams:
    ball_radius: float = 0.035
    striker_radius: float = 0.03
    pocket: tuple = (0.92, 0.92)
    pocket_radius: float = 0.10
    restitution: float = 0.9
    friction: float = 0.9          # per-second exponential decay rate
    cue_start: tuple = (0.32, 0.32)
    target_y: float = 0.6
    target_x_range: tuple = (0.5, 0.68)
    striker_start: tuple = (0.1, 0.1)
    striker_start_jitter: float = 0.05
    max_speed: float = 1.2
    episode_limit: int = 60
    substeps: int = 6  # keeps per-substep travel below a ball radius


class BilliardsEnv(Env):
    def __init__(self, params: BilliardsParams | None = None):
        super().__init__()
        self.params = params or BilliardsParams()
        self.spec = EnvSpec(
            name="billiards",
            obs_dim=12,
            action_dim=2,
            episode_limit=self.params.episode_limit,
            max_speed=self.params.max_speed,
        )
        self.striker = np.zeros(2)
        self.striker_vel = np.zeros(2)
        self.cue = np.zeros(2)
        self.cue_vel = np.zeros(2)
        self.target = np.zeros(2)
        self.target_vel = np.zeros(2)
        self.cue_pocketed = False
        self.target_pocketed = False
        self.striker_touched_target = False
        self.last_step_had_impulse = False

    def _reset_state(self, rng):
        p = self.params
        j = p.striker_start_jitter
        self.striker = np.array(p.striker_start) + rng.uniform(-j, j, 2)
        self.striker_vel = np.zeros(2)
        self.cue = np.array(p.cue_start, dtype=float)
        self.cue_vel = np.zeros(2)
        self.target = np.array([rng.uniform(*p.target_x_range), p.target_y])
        self.target_vel = np.zeros(2)
        self.cue_pocketed = False
        self.target_pocketed = False
        self.striker_touched_target = False
        self.last_step_had_impulse = False

    # --- physics ---------------------------------------------------------

    def _step_dynamics(self, action):
        p = self.params
        self.last_step_had_impulse = False
        self.striker_vel = action * self.spec.max_speed
        dt_sub = DT / p.substeps
        decay = math.exp(-p.friction * dt_sub)
        for _ in range(p.substeps):
            self.striker = np.clip(self.striker + self.striker_vel * dt_sub, 0.0, 1.0)
            for name in ("cue", "target"):
                if getattr(self, f"{name}_pocketed"):
                    continue
                vel = getattr(self, f"{name}_vel") * decay
                if np.linalg.norm(vel) < 1e-4:
                    vel = np.zeros(2)
                pos = getattr(self, name) + vel * dt_sub
                pos, vel = self._wall_bounce(pos, vel, p.ball_radius)
                setattr(self, name, pos)
                setattr(self, f"{name}_vel", vel)
            self._striker_ball_collision("cue")
            self._striker_ball_collision("target")
            self._ball_ball_collision()
            self._pocket_capture()

    def _wall_bounce(self, pos, vel, r):
        e = self.params.restitution
        for axis in (0, 1):
            if pos[axis] < r:
                pos[axis] = r
                if vel[axis] < 0:
                    vel[axis] = -vel[axis] * e
                    self.last_step_had_impulse = True
            elif pos[axis] > 1.0 - r:
                pos[axis] = 1.0 - r
                if vel[axis] > 0:
                    vel[axis] = -vel[axis] * e
                    self.last_step_had_impulse = True
        return pos, vel

    def _striker_ball_collision(self, name):
        if getattr(self, f"{name}_pocketed"):
            return
        p = self.params
        pos = getattr(self, name)
        vel = getattr(self, f"{name}_vel")
        d = pos - self.striker
        dist = float(np.linalg.norm(d))
        touch = p.ball_radius + p.striker_radius
        if dist >= touch or dist < 1e-9:
            return
        n = d / dist
        if name == "target":
            self.striker_touched_target = True
        v_rel = float((vel - self.striker_vel) @ n)
        if v_rel < 0:  # approaching: striker has effectively infinite mass
            vel = vel - (1.0 + p.restitution) * v_rel * n
            self.last_step_had_impulse = True
        pos = self.striker + n * touch  # de-penetrate
        setattr(self, name, pos)
        setattr(self, f"{name}_vel", vel)

    def _ball_ball_collision(self):
        if self.cue_pocketed or self.target_pocketed:
            return
        p = self.params
        d = self.target - self.cue
        dist = float(np.linalg.norm(d))
        touch = 2 * p.ball_radius
        if dist >= touch or dist < 1e-9:
            return
        n = d / dist
        v_rel = float((self.target_vel - self.cue_vel) @ n)
        if v_rel < 0:  # equal masses
            j = -(1.0 + p.restitution) / 2.0 * v_rel
            self.target_vel = self.target_vel + j * n
            self.cue_vel = self.cue_vel - j * n
            self.last_step_had_impulse = True
        overlap = touch - dist
        self.target = self.target + n * (overlap / 2)
        self.cue = self.cue - n * (overlap / 2)

    def _pocket_capture(self):
        p = self.params
        pocket = np.array(p.pocket)
        for name in ("cue", "target"):
            if getattr(self, f"{name}_pocketed"):
                continue
            if np.linalg.norm(getattr(self, name) - pocket) <= p.pocket_radius:
                setattr(self, f"{name}_pocketed", True)
                setattr(self, f"{name}_vel", np.zeros(2))
                setattr(self, name, pocket.copy())

    # --- task surface ------------------------------------------------------

    def success_classifier(self) -> int:
        ok = self.target_pocketed and not self.cue_pocketed and not self.striker_touched_target
        return int(ok)

    def ball_kinetic_energy(self) -> float:
        return 0.5 * float(self.cue_vel @ self.cue_vel + self.target_vel @ self.target_vel)

    def observe(self):
        return np.concatenate(
            [self.striker, self.striker_vel, self.cue, self.cue_vel, self.target, self.target_vel]
        )

    def frame_record(self):
        return {
            "task": "billiards",
            "gripper": [float(self.striker[0]), float(self.striker[1])],
            "objects": {
                "cue": [float(self.cue[0]), float(self.cue[1])],
                "target": [float(self.target[0]), float(self.target[1])],
                "pocket": [float(self.params.pocket[0]), float(self.params.pocket[1])],
            },
            "meta": {
                "cue_pocketed": self.cue_pocketed,
                "target_pocketed": self.target_pocketed,
                "foul": self.striker_touched_target,
            },
        }

    # --- scripted expert ----------------------------------------------------

    def aim_geometry(self):
        """Ghost-ball aiming: where the cue must travel and how fast.

        Returns (ghost_point, aim_dir, strike_speed) where strike_speed is
        the striker speed that rolls the target just past the pocket.
        """
        p = self.params
        pocket = np.array(p.pocket)
        to_pocket = pocket - self.target
        d_tp = float(np.linalg.norm(to_pocket))
        dir_tp = to_pocket / d_tp
        ghost = self.target - dir_tp * (2 * p.ball_radius)
        to_ghost = ghost - self.cue
        d_cg = float(np.linalg.norm(to_ghost))
        aim = to_ghost / max(d_cg, 1e-9)
        cos_cut = float(aim @ dir_tp)
        transfer = (1.0 + p.restitution) / 2.0
        # Exponential time decay => speed drops by `friction` per unit length.
        v_target_0 = p.friction * d_tp + 0.25
        v_cue_impact = v_target_0 / (transfer * max(cos_cut, 0.3))
        v_cue_0 = v_cue_impact + p.friction * d_cg
        strike_speed = v_cue_0 / (1.0 + p.restitution)
        return ghost, aim, strike_speed

    def expert_action(self):
        """Memoryless controller: every branch keys off observable state,
        so demonstrations are clonable from observations alone."""
        p = self.params
        shot_taken = (
            float(np.linalg.norm(self.cue_vel)) > 0.05
            or self.cue_pocketed
            or self.target_pocketed
        )
        if shot_taken:  # retreat to a clear corner and stay there
            delta = np.array([0.06, 0.06]) - self.striker
            return np.clip(delta * 4.0 / self.spec.max_speed, -1, 1)
        ghost, aim, strike_speed = self.aim_geometry()
        w = self.striker - self.cue
        along = float(w @ aim)
        perp = w - along * aim
        perp_err = float(np.linalg.norm(perp))
        touch = p.ball_radius + p.striker_radius
        # strike corridor behind the cue ball along the aim line; contact
        # happens at along = -touch, before the corridor ends
        in_corridor = -0.17 <= along <= -0.4 * touch and perp_err <= 0.01
        if in_corridor:
            # drive through the cue ball, correcting lateral offset so the
            # contact normal matches the aim direction
            cmd = (aim * strike_speed - perp * 8.0) / self.spec.max_speed
            return np.clip(cmd, -1, 1)
        staging = self.cue - aim * 0.14
        delta = staging - self.striker
        return np.clip(delta * 6.0 / self.spec.max_speed, -1, 1)
