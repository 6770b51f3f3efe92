"""Generative event model and the contrast residual used as the filter's measurement.

An event at pixel ``p`` with polarity ``s`` is explained by a state when the
predicted contrast ``-<g, u_dot> * dt`` has sign ``s`` and magnitude close to
the threshold ``C``. The residual

    q = -s * <g, u_dot> * dt - C

is zero for a perfectly explained event. ``g`` is the gradient of the rendered
log-intensity at the event pixel, ``u_dot`` the motion field there and ``dt``
the time since the previous event at the same pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Iterable

import numpy as np
from scipy.signal import find_peaks

from .errors import (
    DegenerateHistogram,
    InsufficientSupport,
    NoPriorEvent,
    NonMonotoneTimestamp,
    NonPositiveDepth,
    TooFewEvents,
)
from .geometry import CameraIntrinsics, PlanarScene, exp_so3
from .scene_map import render_pixels, stencil_gradient
from .state import OMEGA, POS, ROT, VEL, as_vector


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise ValueError("polarity must be +1 or -1")


@dataclass(frozen=True)
class Twist:
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.w))):
            raise ValueError("twist must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])


@dataclass(frozen=True)
class ContrastModel:
    C: float = 0.15
    sigma_C: float = 0.0375

    def __post_init__(self):
        if not (self.C > 0 and self.sigma_C > 0):
            raise ValueError("C and sigma_C must be positive")


@dataclass(frozen=True)
class MapContext:
    """What the residual needs besides the event and the state."""

    scene: PlanarScene
    K: CameraIntrinsics
    patch_size: int = 15

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")


class TimeSurface:
    """Timestamp of the latest event at every pixel (NaN where none yet)."""

    def __init__(self, width: int, height: int):
        self.stamps = np.full((height, width), np.nan)

    def last(self, x: int, y: int) -> float | None:
        s = self.stamps[y, x]
        return None if math.isnan(s) else float(s)

    def update(self, e: Event) -> float | None:
        """Store ``e.t`` and return the time since the pixel's previous event.

        ``None`` marks a pixel's first event.
        """
        prev = self.stamps[e.y, e.x]
        if e.t < prev:
            raise NonMonotoneTimestamp(f"event at {e.t} precedes stored {prev} at ({e.x}, {e.y})")
        self.stamps[e.y, e.x] = e.t
        return None if math.isnan(prev) else e.t - float(prev)


# --- motion field ---------------------------------------------------------------


def interaction_matrix(u, v, Z):
    """2x6 image Jacobian of a point; columns ordered (vx, vy, vz, wx, wy, wz).

    Vectorized: array inputs give ``(..., 2, 6)``.
    """
    u, v, Z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, Z)))
    if np.any(Z <= 0):
        raise NonPositiveDepth("depth must be positive")
    iz = 1.0 / Z
    zero = np.zeros_like(u)
    row1 = np.stack([-iz, zero, u * iz, u * v, -(1.0 + u * u), v], axis=-1)
    row2 = np.stack([zero, -iz, v * iz, 1.0 + v * v, -u * v, -u], axis=-1)
    return np.stack([row1, row2], axis=-2)


def motion_field(u, v, Z, xi) -> np.ndarray:
    """Image velocity (normalized units per second) of a point for camera twist ``xi``."""
    if isinstance(xi, Twist):
        xi = xi.as_vector()
    B = interaction_matrix(u, v, Z)
    return B @ np.asarray(xi, dtype=float)


def camera_frame_twist(state) -> Twist:
    """Twist in camera coordinates: ``v`` is rotated into the camera frame, ``w`` kept."""
    x = as_vector(state)
    R = exp_so3(x[ROT])
    return Twist(R @ x[VEL], x[OMEGA])


def contrast(g, u_dot, dt: float) -> float:
    """First-order log-intensity change ``-<g, u_dot> dt``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return -float(np.dot(g, u_dot)) * dt


def spike_decision(dlogI: float, C: float):
    """+1, -1, or None when the change stays below threshold."""
    if C <= 0:
        raise ValueError("threshold must be positive")
    if dlogI >= C:
        return 1
    if dlogI <= -C:
        return -1
    return None


# --- residual -----------------------------------------------------------------


def _stencil_offsets(patch_size: int):
    half = patch_size // 2
    dy, dx = np.mgrid[-half : half + 1, -half : half + 1]
    return dx.ravel(), dy.ravel()


def absolute_contrast_batch(x: int, y: int, polarity: int, dt: float, states, ctx: MapContext):
    """Predicted absolute contrast ``-p <g, u_dot> dt`` for many states at once.

    ``states`` is ``(N, 12)``. Renders a ``patch_size`` window centered on the
    event for every state. Returns ``(values (N,), valid (N,))``; a state is
    invalid when the 3x3 gradient stencil is not fully on the map.
    """
    X = np.atleast_2d(states)
    K = ctx.K
    n = ctx.patch_size
    dx, dy = _stencil_offsets(n)
    xy = np.stack([x + dx, y + dy], axis=-1).astype(float)
    R = exp_so3(X[:, ROT])
    L, depth, valid = render_pixels(ctx.scene, X[:, POS], R, K, xy)
    c = n // 2
    L = L.reshape(-1, n, n)[:, c - 1 : c + 2, c - 1 : c + 2]
    ok = valid.reshape(-1, n, n)[:, c - 1 : c + 2, c - 1 : c + 2].all(axis=(1, 2))
    Z = depth.reshape(-1, n, n)[:, c, c]
    g = stencil_gradient(L, K)
    u = (x - K.cx) / K.fx
    v = (y - K.cy) / K.fy
    v_cam = np.matmul(R, X[:, VEL, None])[..., 0]
    xi = np.concatenate([v_cam, X[:, OMEGA]], axis=1)
    B = interaction_matrix(u, v, np.where(ok, Z, 1.0))  # (N, 2, 6)
    u_dot = np.matmul(B, xi[..., None])[..., 0]
    vals = -polarity * (g[:, 0] * u_dot[:, 0] + g[:, 1] * u_dot[:, 1]) * dt
    return np.where(ok, vals, 0.0), ok


def measurement_q(event: Event, state, ctx: MapContext, dt: float | None, C: float) -> float:
    """Contrast residual of one event under one state.

    ``dt`` is the time since the previous event at the pixel (``None`` if none).
    """
    if dt is None:
        raise NoPriorEvent(f"no earlier event at pixel ({event.x}, {event.y})")
    vals, ok = absolute_contrast_batch(event.x, event.y, event.p, dt, as_vector(state)[None], ctx)
    if not ok[0]:
        raise InsufficientSupport(f"event pixel ({event.x}, {event.y}) not fully on the map")
    return float(vals[0]) - C


# --- threshold calibration ------------------------------------------------------


@dataclass(frozen=True)
class ContrastFit:
    model: ContrastModel
    bin_edges: np.ndarray
    density: np.ndarray
    n_used: int


def _trimmed_normal_scale(mass: float) -> float:
    """Std of a standard normal restricted to its central ``mass``."""
    z = NormalDist().inv_cdf(0.5 + mass / 2.0)
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return math.sqrt(1.0 - 2.0 * z * phi / mass)


def fit_contrast_model(values, central_mass: float = 0.9, bins: int = 40,
                       min_count: int = 100) -> ContrastFit:
    """Gaussian fit by moment matching on the central mass of the sample.

    The trimmed standard deviation is rescaled so that it is unbiased for
    normally distributed data.
    """
    vals = np.asarray(values, dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size < min_count:
        raise TooFewEvents(f"need at least {min_count} contrast values, got {vals.size}")
    tail = (1.0 - central_mass) / 2.0
    lo, hi = np.quantile(vals, [tail, 1.0 - tail])
    core = vals[(vals >= lo) & (vals <= hi)]
    std = float(np.std(core)) / _trimmed_normal_scale(central_mass)
    if not std >= 1e-6:
        raise DegenerateHistogram("contrast values have (near) zero spread")
    mean = float(np.mean(core))
    if mean <= 0:
        raise DegenerateHistogram("fitted threshold is not positive")
    density, edges = np.histogram(vals, bins=bins, range=(lo - (hi - lo), hi + (hi - lo)), density=True)
    return ContrastFit(ContrastModel(mean, std), edges, density, int(vals.size))


def is_unimodal(density, rel_prominence: float = 0.2) -> bool:
    """One dominant peak: no secondary peak with prominence above ``rel_prominence`` of the max."""
    d = np.concatenate([[0.0], np.asarray(density, dtype=float), [0.0]])
    peaks, _ = find_peaks(d, prominence=rel_prominence * d.max())
    return len(peaks) == 1


def absolute_contrasts(events: Iterable[Event], state_at: Callable[[float], np.ndarray],
                       ctx: MapContext, limit: int | None = None) -> np.ndarray:
    """Measured absolute contrast ``-p <g, u_dot> dt`` for events with a valid residual.

    ``state_at(t)`` returns the 12-vector state used to evaluate event ``t``.
    Stops after ``limit`` valid values.
    """
    ts = TimeSurface(ctx.K.width, ctx.K.height)
    out = []
    for e in events:
        dt = ts.update(e)
        if dt is None:
            continue
        vals, ok = absolute_contrast_batch(e.x, e.y, e.p, dt, state_at(e.t)[None], ctx)
        if ok[0]:
            out.append(vals[0])
            if limit is not None and len(out) >= limit:
                break
    return np.asarray(out)


def estimate_threshold(events: Iterable[Event], state_at, ctx: MapContext,
                       limit: int | None = None, **fit_kw) -> ContrastFit:
    return fit_contrast_model(absolute_contrasts(events, state_at, ctx, limit), **fit_kw)

