"""Implicit EKF tracking pose and velocity from individual events.

Prediction uses a constant-velocity model on the state
``x = (t, r, v, w)``; correction linearizes the contrast residual of each
event around the predicted mean. All Jacobians are central finite
differences, evaluated in one vectorized batch per step.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateInnovationCovariance, FilterDivergence
from .event_model import ContrastModel, Event, MapContext, TimeSurface, absolute_contrast_batch
from .geometry import _log_so3_unchecked, canonical_rotvec, exp_so3
from .state import DIM, OMEGA, POS, ROT, VEL, SensorState, as_vector

logger = logging.getLogger(__name__)

NOISE_DIM = 6
FD_STEP = 1e-6


@dataclass(frozen=True)
class Belief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(as_vector(self.mean), dtype=float).copy())
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).copy())
        if self.cov.shape != (DIM, DIM):
            raise ValueError("covariance must be 12x12")

    @property
    def state(self) -> SensorState:
        return SensorState.from_vector(self.mean)


@dataclass(frozen=True)
class ProcessNoise:
    """Covariance of the velocity increments (V, W) per second of elapsed time."""

    Q_w: np.ndarray

    @classmethod
    def diagonal(cls, sigma_v: float = 0.1, sigma_w: float = 0.1) -> "ProcessNoise":
        return cls(np.diag([sigma_v**2] * 3 + [sigma_w**2] * 3))

    def over(self, dt: float) -> np.ndarray:
        return np.asarray(self.Q_w, dtype=float) * dt


@dataclass(frozen=True)
class FilterConfig:
    sigma_v: float = 0.1
    sigma_w: float = 0.1
    sigma0_t: float = 0.01
    sigma0_r: float = math.radians(1.0)
    sigma0_v: float = 0.05
    sigma0_w: float = 0.05
    packet_size: int = 1
    patch_size: int = 15
    snapshot_every: int = 500
    fd_step: float = FD_STEP
    max_skip_fraction: float = 0.9

    @property
    def process_noise(self) -> ProcessNoise:
        return ProcessNoise.diagonal(self.sigma_v, self.sigma_w)

    def initial_covariance(self) -> np.ndarray:
        s = [self.sigma0_t] * 3 + [self.sigma0_r] * 3 + [self.sigma0_v] * 3 + [self.sigma0_w] * 3
        return np.diag(np.square(s))


# --- prediction -------------------------------------------------------------------


def motion_model(X, W, dt: float):
    """Constant-velocity propagation, batched: ``X (N, 12)``, ``W (N, 6)``.

    ``R_n = exp(-(w + W)^ dt) R_{n-1}``: with ``R`` mapping world to camera,
    a camera turning at body rate ``w`` sees the world turn at ``-w``.
    """
    X = np.atleast_2d(X)
    W = np.atleast_2d(W)
    v = X[:, VEL] + W[:, :3]
    w = X[:, OMEGA] + W[:, 3:]
    out = np.empty_like(X)
    out[:, POS] = X[:, POS] + v * dt
    out[:, ROT] = _log_so3_unchecked(exp_so3(-w * dt) @ exp_so3(X[:, ROT]))
    out[:, VEL] = v
    out[:, OMEGA] = w
    return out


def _fd_batch(x, h):
    n = x.size
    E = np.eye(n) * h
    return np.vstack([x + E, x - E])


def jacobian_F(state, dt: float, h: float = FD_STEP) -> np.ndarray:
    x = as_vector(state)
    out = motion_model(_fd_batch(x, h), np.zeros((2 * DIM, NOISE_DIM)), dt)
    return ((out[:DIM] - out[DIM:]) / (2 * h)).T


def jacobian_L(state, dt: float, h: float = FD_STEP) -> np.ndarray:
    x = as_vector(state)
    Wp = _fd_batch(np.zeros(NOISE_DIM), h)
    out = motion_model(np.tile(x, (2 * NOISE_DIM, 1)), Wp, dt)
    return ((out[:NOISE_DIM] - out[NOISE_DIM:]) / (2 * h)).T


def _propagate(x, dt, h):
    """Mean plus F and L from a single batched evaluation of the motion model."""
    Xs = np.vstack([x[None], _fd_batch(x, h), np.tile(x, (2 * NOISE_DIM, 1))])
    Ws = np.vstack([np.zeros((1 + 2 * DIM, NOISE_DIM)), _fd_batch(np.zeros(NOISE_DIM), h)])
    out = motion_model(Xs, Ws, dt)
    F = ((out[1 : 1 + DIM] - out[1 + DIM : 1 + 2 * DIM]) / (2 * h)).T
    o = 1 + 2 * DIM
    L = ((out[o : o + NOISE_DIM] - out[o + NOISE_DIM :]) / (2 * h)).T
    return out[0], F, L


def predict(b: Belief, dt: float, Q: ProcessNoise, h: float = FD_STEP) -> Belief:
    if dt < 0:
        raise ValueError("prediction interval must be non-negative")
    if dt == 0:
        return b
    mean, F, L = _propagate(b.mean, dt, h)
    cov = F @ b.cov @ F.T + L @ Q.over(dt) @ L.T
    return Belief(mean, 0.5 * (cov + cov.T))


# --- correction ---------------------------------------------------------------------


class Skip(enum.Enum):
    NO_PRIOR = "no-prior-event"
    OFF_MAP = "off-map"


@dataclass(frozen=True)
class Innovation:
    nu: float
    H: np.ndarray
    S: float
    R: float


def innovate(e: Event, b: Belief, dt_pixel: float | None, ctx: MapContext,
             model: ContrastModel, h: float = FD_STEP) -> Innovation | Skip:
    """Innovation ``-q``, its Jacobian and variance for one event.

    ``dt_pixel`` is the time since the previous event at the event's pixel.
    """
    if dt_pixel is None:
        return Skip.NO_PRIOR
    X = np.vstack([b.mean[None], _fd_batch(b.mean, h)])
    vals, ok = absolute_contrast_batch(e.x, e.y, e.p, dt_pixel, X, ctx)
    if not ok.all():
        return Skip.OFF_MAP
    q = vals - model.C
    H = (q[1 : 1 + DIM] - q[1 + DIM :]) / (2 * h)
    R = model.sigma_C**2
    return Innovation(-float(q[0]), H, float(H @ b.cov @ H + R), R)


def correct(b: Belief, nu: float, H, S: float, R: float | None = None) -> Belief:
    """Kalman update with the Joseph-form covariance."""
    if S < 1e-15:
        raise DegenerateInnovationCovariance(f"innovation variance {S!r} too small")
    H = np.asarray(H, dtype=float).reshape(DIM)
    PHt = b.cov @ H
    if R is None:
        R = S - float(H @ PHt)
    K = PHt / S
    mean = b.mean + K * nu
    mean[ROT] = canonical_rotvec(mean[ROT])
    A = np.eye(DIM) - np.outer(K, H)
    cov = A @ b.cov @ A.T + R * np.outer(K, K)
    return Belief(mean, 0.5 * (cov + cov.T))


# --- stream processing -------------------------------------------------------------


@dataclass
class Snapshot:
    t: float
    belief: Belief
    n_events: int
    n_skipped: int


@dataclass
class TrackingRun:
    snapshots: list[Snapshot] = field(default_factory=list)
    n_events: int = 0
    skipped: dict = field(default_factory=lambda: {s: 0 for s in Skip})

    @property
    def n_skipped(self) -> int:
        return sum(self.skipped.values())

    @property
    def final(self) -> Belief:
        return self.snapshots[-1].belief


Observer = Callable[[str, Belief, dict], None]


def process_stream(stream, b0: Belief, ctx: MapContext, model: ContrastModel,
                   config: FilterConfig = FilterConfig(), t0: float | None = None,
                   observer: Observer | None = None) -> TrackingRun:
    """Run the filter over ``stream`` (time ordered) starting from ``b0`` at ``t0``.

    ``observer(stage, belief, info)`` is called after every prediction
    (``stage == "predict"``) and every correction (``"correct"``, with the
    applied ``H`` and the pre-update ``Sigma``) for diagnostics.
    """
    Q = config.process_noise
    h = config.fd_step
    ts = TimeSurface(stream.width, stream.height)
    run = TrackingRun()
    t_all = np.asarray(stream.t, dtype=float)
    if t0 is None:
        t0 = float(t_all[0]) if t_all.size else 0.0
    b = b0
    t_cur = t0
    run.snapshots.append(Snapshot(t0, b0, 0, 0))

    xs = stream.x.tolist()
    ys = stream.y.tolist()
    ps = stream.p.tolist()
    tl = t_all.tolist()
    n = len(tl)
    packet = max(1, int(config.packet_size))
    every = max(1, int(config.snapshot_every))

    for start in range(0, n, packet):
        stop = min(start + packet, n)
        t_pred = tl[stop - 1]
        b = predict(b, t_pred - t_cur, Q, h)
        t_cur = t_pred
        if observer is not None:
            observer("predict", b, {"t": t_cur})
        for i in range(start, stop):
            e = Event(xs[i], ys[i], tl[i], ps[i])
            dt_pix = ts.update(e)
            out = innovate(e, b, dt_pix, ctx, model, h)
            if isinstance(out, Skip):
                run.skipped[out] += 1
            else:
                prior = b
                b = correct(b, out.nu, out.H, out.S, out.R)
                if observer is not None:
                    observer("correct", b, {"t": e.t, "H": out.H, "prior": prior, "nu": out.nu})
            run.n_events = i + 1
            if run.n_events % every == 0:
                run.snapshots.append(Snapshot(e.t, b, run.n_events, run.n_skipped))
    if run.snapshots[-1].n_events != run.n_events:
        run.snapshots.append(Snapshot(t_cur, b, run.n_events, run.n_skipped))

    if n and run.n_skipped > config.max_skip_fraction * n:
        err = FilterDivergence(
            f"{run.n_skipped} of {n} events skipped "
            f"({', '.join(f'{k.value}={v}' for k, v in run.skipped.items())})",
        )
        err.run = run
        raise err
    logger.info("processed %d events, skipped %d", n, run.n_skipped)
    return run


REPORT_COLUMNS = "t tx ty tz rx ry rz vx vy vz wx wy wz trace_cov n_skipped".split()


def report_rows(run: TrackingRun) -> list[list[float]]:
    rows = []
    for s in run.snapshots:
        rows.append([s.t, *s.belief.mean.tolist(), float(np.trace(s.belief.cov)), s.n_skipped])
    return rows
