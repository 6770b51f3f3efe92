"""Rotation-vector kinematics, pinhole camera and ray casting onto a plane.

Conventions used everywhere in the package:

* A pose is ``(t, r)``: ``t`` is the optical center in world coordinates and
  ``R = exp_so3(r)`` rotates world vectors into the camera frame, so that
  ``X_cam = R @ (X_world - t)``.
* Camera frame: x right, y down, z along the optical axis.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import (
    AngleNearPi,
    BehindCamera,
    NotARotation,
    NotSkew,
    OutsideMap,
    RayParallelToPlane,
)

if TYPE_CHECKING:
    from .scene_map import DenseMap

_SMALL_ANGLE = 1e-6
_NEAR_PI = 1e-3


def hat(a):
    """Cross-product matrix of a 3-vector (batched over leading axes)."""
    a = np.asarray(a, dtype=float)
    S = np.zeros(a.shape[:-1] + (3, 3))
    S[..., 0, 1] = -a[..., 2]
    S[..., 0, 2] = a[..., 1]
    S[..., 1, 0] = a[..., 2]
    S[..., 1, 2] = -a[..., 0]
    S[..., 2, 0] = -a[..., 1]
    S[..., 2, 1] = a[..., 0]
    return S


def vee(S, check: bool = True):
    S = np.asarray(S, dtype=float)
    if check and np.max(np.abs(S + np.swapaxes(S, -1, -2)), initial=0.0) >= 1e-9:
        raise NotSkew("matrix is not skew-symmetric")
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def exp_so3(r):
    """Rodrigues formula; accepts ``(3,)`` or ``(..., 3)``."""
    r = np.asarray(r, dtype=float)
    theta2 = np.einsum("...i,...i->...", r, r)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(safe) / safe)
    b = np.where(
        small,
        0.5 - theta2 / 24.0 + theta2**2 / 720.0,
        (1.0 - np.cos(safe)) / (safe * safe),
    )
    # K @ K = r r^T - |r|^2 I
    R = (b[..., None, None] * r[..., :, None]) * r[..., None, :]
    diag = 1.0 - b * theta2
    R[..., 0, 0] += diag
    R[..., 1, 1] += diag
    R[..., 2, 2] += diag
    ar = a[..., None] * r
    R[..., 0, 1] -= ar[..., 2]
    R[..., 0, 2] += ar[..., 1]
    R[..., 1, 0] += ar[..., 2]
    R[..., 1, 2] -= ar[..., 0]
    R[..., 2, 0] -= ar[..., 1]
    R[..., 2, 1] += ar[..., 0]
    return R


def _log_so3_unchecked(R):
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)

    small = theta < _SMALL_ANGLE
    near_pi = (c < 0) & (s < 1e-3)
    regular = ~(small | near_pi)

    out = np.zeros(w.shape)
    if np.any(small):
        t2 = theta[small] ** 2
        out[small] = w[small] * (1.0 + t2 / 6.0 + 7.0 * t2**2 / 360.0)[..., None]
    if np.any(regular):
        out[regular] = w[regular] * (theta[regular] / s[regular])[..., None]
    if np.any(near_pi):
        # Axis from the symmetric part: (R + R^T)/2 = cos(th) I + (1 - cos(th)) a a^T.
        Rp = R[near_pi]
        cp = c[near_pi]
        A = 0.5 * (Rp + np.swapaxes(Rp, -1, -2)) - cp[:, None, None] * np.eye(3)
        A /= (1.0 - cp)[:, None, None]
        diag = np.diagonal(A, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        idx = np.arange(len(k))
        axis = A[idx, :, k] / np.sqrt(np.maximum(diag[idx, k], 1e-300))[:, None]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        sign = np.where(np.sum(axis * w[near_pi], axis=-1) < 0, -1.0, 1.0)
        out[near_pi] = axis * (sign * theta[near_pi])[:, None]
    return out


def log_so3(R, check: bool = True):
    """Rotation vector with norm in ``[0, pi]``; accepts ``(3, 3)`` or ``(..., 3, 3)``.

    Raises NotARotation when ``R`` is not orthonormal with det +1 (to 1e-6).
    Emits an AngleNearPi warning when the angle exceeds ``pi - 1e-3``.
    """
    R = np.asarray(R, dtype=float)
    if check:
        err = R @ np.swapaxes(R, -1, -2) - np.eye(3)
        if np.max(np.abs(err), initial=0.0) > 1e-6 or np.any(np.abs(np.linalg.det(R) - 1.0) > 1e-6):
            raise NotARotation("matrix is not a proper rotation")
    r = _log_so3_unchecked(R)
    if check and np.any(np.linalg.norm(r, axis=-1) > math.pi - _NEAR_PI):
        warnings.warn("rotation angle near pi; axis is poorly conditioned", AngleNearPi, stacklevel=2)
    return r


def canonical_rotvec(r):
    """Map a rotation vector to the equivalent one with norm in [0, pi]."""
    r = np.asarray(r, dtype=float)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.all(theta <= math.pi):
        return r.copy()
    wrapped = np.mod(theta + math.pi, 2.0 * math.pi) - math.pi
    safe = np.where(theta > 0, theta, 1.0)
    return np.where(theta > math.pi, r * (wrapped / safe), r)


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix."""
    return float(np.linalg.norm(_log_so3_unchecked(R)))


@dataclass(frozen=True)
class Pose:
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))

    @property
    def R(self) -> np.ndarray:
        return exp_so3(self.r)

    @classmethod
    def from_matrix(cls, t, R) -> "Pose":
        return cls(t, log_so3(R))

    def to_camera(self, X_world):
        """World points ``(..., 3)`` into camera coordinates."""
        return (np.asarray(X_world, dtype=float) - self.t) @ self.R.T

    def to_world(self, X_cam):
        return np.asarray(X_cam, dtype=float) @ self.R + self.t

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other`` as maps world->camera: apply ``other`` first.

        Both poses are read as rigid maps ``X -> R (X - t)``.
        """
        R = self.R @ other.R
        # R_s (R_o (X - t_o) - t_s) = R (X - t_o - R_o^T t_s)
        t = other.t + other.R.T @ self.t
        return Pose(t, log_so3(R))

    def inverse(self) -> "Pose":
        # X = R^T Y + t = R^T (Y + R t)  ->  rotation R^T, center -R t
        R = self.R
        return Pose(-R @ self.t, log_so3(R.T))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 65.0
    fy: float = 65.0
    cx: float = 63.5
    cy: float = 63.5
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie on the sensor")

    def contains(self, x, y) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


def project(X_cam):
    """Normalized image coordinates of a camera-frame point."""
    X_cam = np.asarray(X_cam, dtype=float)
    Z = X_cam[..., 2]
    if np.any(Z <= 1e-9):
        raise BehindCamera("point has non-positive depth")
    return X_cam[..., :2] / Z[..., None]


def pixel_from_normalized(uv, K: CameraIntrinsics):
    uv = np.asarray(uv, dtype=float)
    return np.stack([K.fx * uv[..., 0] + K.cx, K.fy * uv[..., 1] + K.cy], axis=-1)


def normalized_from_pixel(xy, K: CameraIntrinsics):
    xy = np.asarray(xy, dtype=float)
    return np.stack([(xy[..., 0] - K.cx) / K.fx, (xy[..., 1] - K.cy) / K.fy], axis=-1)


@dataclass(frozen=True)
class PlanarScene:
    """A textured plane.

    The plane frame follows the ``Pose`` convention: a point with in-plane
    coordinates ``(a, b)`` sits at ``X_world = plane_pose.to_world((a, b, 0))``.
    The texture's metric extent is carried by the ``DenseMap`` itself.
    """

    plane_pose: Pose
    texture: "DenseMap"

    @property
    def normal(self) -> np.ndarray:
        return self.plane_pose.R[2].copy()

    @property
    def extent(self) -> tuple[float, float]:
        return self.texture.extent

    def plane_coords(self, X_world):
        """In-plane ``(a, b)`` coordinates of world points on the plane."""
        local = self.plane_pose.to_camera(X_world)
        return local[..., :2]


def ray_directions(xy, K: CameraIntrinsics):
    """Camera-frame ray directions with unit z-component for pixels ``(..., 2)``."""
    uv = normalized_from_pixel(xy, K)
    return np.concatenate([uv, np.ones(uv.shape[:-1] + (1,))], axis=-1)


def cast_rays(xy, t, R, K: CameraIntrinsics, scene: PlanarScene):
    """Intersect pixel rays with the scene plane for a batch of poses.

    ``xy`` is ``(M, 2)``; ``t`` is ``(N, 3)`` and ``R`` is ``(N, 3, 3)``.
    Returns ``(X_world (N, M, 3), depth (N, M), ab (N, M, 2), valid (N, M))``.
    Depth equals the ray parameter because directions have unit z in the
    camera frame. ``valid`` is false for parallel rays, intersections behind
    the camera and points outside the texture.
    """
    t = np.atleast_2d(np.asarray(t, dtype=float))
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    d_cam = ray_directions(np.atleast_2d(xy), K)  # (M, 3)
    d_world = np.matmul(d_cam, R)  # rows of R^T d, shape (N, M, 3)
    n = scene.normal
    p0 = scene.plane_pose.t
    denom = d_world @ n  # (N, M)
    num = (p0 - t) @ n  # (N,)
    parallel = np.abs(denom) < 1e-9
    lam = num[:, None] / np.where(parallel, 1.0, denom)
    X = t[:, None, :] + lam[..., None] * d_world
    ab = scene.plane_coords(X)
    inside = scene.texture.contains(ab[..., 0], ab[..., 1])
    valid = ~parallel & (lam > 1e-9) & inside
    return X, lam, ab, valid


def cast_ray(pixel, pose: Pose, K: CameraIntrinsics, scene: PlanarScene):
    """World point and camera depth seen through one pixel.

    Raises RayParallelToPlane, BehindCamera or OutsideMap.
    """
    xy = np.asarray(pixel, dtype=float).reshape(1, 2)
    R = pose.R
    d_world = R.T @ ray_directions(xy, K)[0]
    if abs(float(d_world @ scene.normal)) < 1e-9:
        raise RayParallelToPlane(f"ray through pixel {tuple(xy[0])} is parallel to the plane")
    X, lam, ab, _ = cast_rays(xy, pose.t, R, K, scene)
    if lam[0, 0] <= 1e-9:
        raise BehindCamera("plane is behind the camera along this ray")
    if not scene.texture.contains(ab[0, 0, 0], ab[0, 0, 1]):
        raise OutsideMap(f"ray through pixel {tuple(xy[0])} misses the map")
    return X[0, 0], float(lam[0, 0])
