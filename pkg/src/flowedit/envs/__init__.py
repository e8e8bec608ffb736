"""Task registry and config plumbing for the desk-scale environments."""

from __future__ import annotations

from dataclasses import fields

from .base import DT, Env, EnvError, EnvSpec
from .billiards import BilliardsEnv, BilliardsParams
from .pick_place import PickPlaceEnv, PickPlaceParams
from .point_insert import PointInsertEnv, PointInsertParams

_REGISTRY = {
    "pointinsert": (PointInsertEnv, PointInsertParams),
    "pickplace": (PickPlaceEnv, PickPlaceParams),
    "billiards": (BilliardsEnv, BilliardsParams),
}

TASKS = tuple(_REGISTRY)


def make_env(task: str, overrides: dict | None = None) -> Env:
    if task not in _REGISTRY:
        raise KeyError(f"unknown task {task!r}; known: {sorted(_REGISTRY)}")
    env_cls, params_cls = _REGISTRY[task]
    kwargs = {}
    if overrides:
        names = {f.name for f in fields(params_cls)}
        bad = set(overrides) - names
        if bad:
            raise KeyError(f"unknown env params for {task}: {sorted(bad)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
    return env_cls(params_cls(**kwargs))


__all__ = [
    "DT",
    "Env",
    "EnvError",
    "EnvSpec",
    "BilliardsEnv",
    "BilliardsParams",
    "PickPlaceEnv",
    "PickPlaceParams",
    "PointInsertEnv",
    "PointInsertParams",
    "TASKS",
    "make_env",
]
