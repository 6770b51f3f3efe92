"""12-dimensional sensor state: position, rotation vector, velocity, angular velocity."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, exp_so3

POS = slice(0, 3)
ROT = slice(3, 6)
VEL = slice(6, 9)
OMEGA = slice(9, 12)
DIM = 12


@dataclass(frozen=True)
class SensorState:
    """``t`` world position (m), ``r`` world->camera rotation vector,
    ``v`` world-frame velocity (m/s), ``w`` body angular velocity (rad/s)."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("t", "r", "v", "w"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.t, self.r, self.v, self.w])

    @classmethod
    def from_vector(cls, x) -> "SensorState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS], x[ROT], x[VEL], x[OMEGA])

    @property
    def pose(self) -> Pose:
        return Pose(self.t, self.r)

    @property
    def R(self) -> np.ndarray:
        return exp_so3(self.r)


def as_vector(state) -> np.ndarray:
    if isinstance(state, SensorState):
        return state.to_vector()
    x = np.asarray(state, dtype=float)
    if x.shape[-1] != DIM:
        raise ValueError(f"state vector must have {DIM} components")
    return x
