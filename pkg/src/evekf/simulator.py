"""Ground-truth trajectories and synthetic event streams rendered from the dense map."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DataError, NoVisiblePixels
from .event_model import ContrastModel, Event, TimeSurface
from .geometry import CameraIntrinsics, PlanarScene, Pose, _log_so3_unchecked, exp_so3
from .scene_map import render_pixels

logger = logging.getLogger(__name__)

POLICIES = ("level-crossing", "paper-subtract-sample")


@dataclass(frozen=True)
class Trajectory:
    """Sampled rigid motion.

    Rotation vectors follow the world->camera convention; ``v`` is the world
    frame velocity and ``w`` the body angular velocity, so that between
    samples ``R(t + h) = exp(-h w^) R(t)`` for constant ``w``.
    """

    times: np.ndarray
    positions: np.ndarray
    rotvecs: np.ndarray
    velocities: np.ndarray
    omegas: np.ndarray

    def __post_init__(self):
        for name in ("times", "positions", "rotvecs", "velocities", "omegas"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError("trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def states(self) -> np.ndarray:
        """All samples as ``(N, 12)`` state vectors."""
        return np.hstack([self.positions, self.rotvecs, self.velocities, self.omegas])

    def state_at(self, t: float) -> np.ndarray:
        """12-vector state at time ``t`` (clamped to the sampled range).

        Positions use cubic Hermite interpolation on (position, velocity),
        which is exact for constant acceleration. Rotation follows the
        constant-axis geodesic between the bracketing samples.
        """
        times = self.times
        if len(times) == 1 or t <= times[0]:
            return self.states()[0].copy()
        if t >= times[-1]:
            return self.states()[-1].copy()
        k = int(np.searchsorted(times, t, side="right")) - 1
        h = times[k + 1] - times[k]
        s = (t - times[k]) / h
        p0, p1 = self.positions[k], self.positions[k + 1]
        v0, v1 = self.velocities[k], self.velocities[k + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        pos = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1
        R0 = exp_so3(self.rotvecs[k])
        R1 = exp_so3(self.rotvecs[k + 1])
        rel = _log_so3_unchecked(R1 @ R0.T)
        rot = _log_so3_unchecked(exp_so3(s * rel) @ R0)
        vel = (1 - s) * v0 + s * v1
        om = (1 - s) * self.omegas[k] + s * self.omegas[k + 1]
        return np.concatenate([pos, rot, vel, om])

    def pose_at(self, t: float) -> Pose:
        x = self.state_at(t)
        return Pose(x[:3], x[3:6])


def _sample_times(duration: float, rate: float) -> np.ndarray:
    if rate <= 0 or duration < 0:
        raise ValueError("rate must be positive and duration non-negative")
    n = int(round(duration * rate))
    times = np.arange(n + 1) / rate
    if n > 0:
        times[-1] = duration
    return times


def make_const_accel_trajectory(p0: Pose, v0, a, duration: float, rate: float,
                                omega=(0.0, 0.0, 0.0)) -> Trajectory:
    """Linear motion with constant acceleration; optional constant body rotation rate."""
    tau = _sample_times(duration, rate)
    v0 = np.asarray(v0, dtype=float)
    a = np.asarray(a, dtype=float)
    omega = np.asarray(omega, dtype=float)
    pos = p0.t + np.outer(tau, v0) + 0.5 * np.outer(tau**2, a)
    vel = v0 + np.outer(tau, a)
    R0 = p0.R
    rot = _log_so3_unchecked(exp_so3(-np.outer(tau, omega)) @ R0)
    return Trajectory(tau, pos, rot, vel, np.tile(omega, (tau.size, 1)))


def make_const_velocity_trajectory(p0: Pose, v, duration: float, rate: float,
                                   omega=(0.0, 0.0, 0.0)) -> Trajectory:
    return make_const_accel_trajectory(p0, v, np.zeros(3), duration, rate, omega)


@dataclass
class EventStream:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    model: ContrastModel
    seed: int = 0
    trajectory: Trajectory | None = None
    header: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def head(self, n: int) -> "EventStream":
        return EventStream(self.t[:n], self.x[:n], self.y[:n], self.p[:n], self.width,
                           self.height, self.model, self.seed, self.trajectory, dict(self.header))


def time_surface_update(ts: TimeSurface, e: Event):
    """Return ``(dt, ts)``; ``dt`` is None for a pixel's first event."""
    return ts.update(e), ts


def _frame_times(traj: Trajectory, frame_rate: float) -> np.ndarray:
    n = int(np.ceil((traj.t_end - traj.t0) * frame_rate - 1e-9))
    times = traj.t0 + np.arange(n + 1) / frame_rate
    times[-1] = traj.t_end
    return times


def _render_frame(scene, K, traj, t, xy):
    x = traj.state_at(t)
    L, _, valid = render_pixels(scene, x[None, :3], exp_so3(x[3:6])[None], K, xy)
    if not valid.any():
        raise NoVisiblePixels(f"no pixel sees the map at t={t:.6f}")
    return L[0], valid[0]


def synthesize_events(traj: Trajectory, scene: PlanarScene, K: CameraIntrinsics,
                      model: ContrastModel, frame_rate: float = 1000.0,
                      policy: str = "level-crossing", seed: int = 0, jitter: bool = True,
                      events_per_interval: int = 500, interval: float = 0.008,
                      sampling: str = "uniform") -> EventStream:
    """Render the map along ``traj`` and turn brightness changes into events.

    ``level-crossing``: every pixel keeps the log intensity at its last event;
    each crossing of +-threshold emits one event, timestamped by linear
    interpolation inside the frame interval. With ``jitter`` the threshold of
    every event is drawn from N(C, sigma_C^2).

    ``paper-subtract-sample``: adjacent frames are subtracted, pixels with
    |difference| >= C become candidates, and ``events_per_interval`` events
    per ``interval`` seconds are drawn from them (``sampling`` = ``uniform``
    or ``proportional`` to |difference|) with uniform timestamps in the frame
    interval.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    rng = np.random.default_rng(seed)
    W, H = K.width, K.height
    ys, xs = np.mgrid[0:H, 0:W]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(float)
    header = {"policy": policy, "frame_rate": frame_rate, "jitter": int(jitter)}

    if len(traj) < 2 or traj.t_end <= traj.t0:
        return _finish([], W, H, model, seed, traj, header)

    times = _frame_times(traj, frame_rate)
    L_prev, valid_prev = _render_frame(scene, K, traj, times[0], xy)
    chunks = []

    if policy == "level-crossing":
        ref = np.where(valid_prev, L_prev, np.nan)
        thr = _draw_thresholds(rng, model, ref.size, jitter)
        for k in range(1, times.size):
            L, valid = _render_frame(scene, K, traj, times[k], xy)
            ok = valid & valid_prev & ~np.isnan(ref)
            t0, t1 = times[k - 1], times[k]
            while True:
                diff = np.where(ok, L - ref, 0.0)
                fire = np.flatnonzero(np.abs(diff) >= thr)
                if fire.size == 0:
                    break
                sign = np.where(diff[fire] > 0, 1, -1)
                level = ref[fire] + sign * thr[fire]
                span = L[fire] - L_prev[fire]
                frac = np.clip((level - L_prev[fire]) / span, 0.0, 1.0)
                chunks.append((t0 + frac * (t1 - t0), fire, sign))
                ref[fire] = level
                thr[fire] = _draw_thresholds(rng, model, fire.size, jitter)
            # pixels (re)entering the map start from their current intensity
            ref = np.where(valid, np.where(np.isnan(ref) | ~valid_prev, L, ref), np.nan)
            L_prev, valid_prev = L, valid
    else:
        rate = events_per_interval / interval
        target_prev = 0
        for k in range(1, times.size):
            L, valid = _render_frame(scene, K, traj, times[k], xy)
            t0, t1 = times[k - 1], times[k]
            diff = np.where(valid & valid_prev, L - L_prev, 0.0)
            cand = np.flatnonzero(np.abs(diff) >= model.C)
            target = int(np.floor(rate * (t1 - times[0]) + 0.5))
            n = min(target - target_prev, cand.size)
            target_prev = target
            if n > 0:
                if sampling == "proportional":
                    w = np.abs(diff[cand])
                    pick = rng.choice(cand, size=n, replace=False, p=w / w.sum())
                else:
                    pick = rng.choice(cand, size=n, replace=False)
                pick = np.sort(pick)
                ts = rng.uniform(t0, t1, size=n)
                chunks.append((ts, pick, np.where(diff[pick] > 0, 1, -1)))
            L_prev, valid_prev = L, valid

    return _finish(chunks, W, H, model, seed, traj, header)


def _draw_thresholds(rng, model: ContrastModel, n: int, jitter: bool) -> np.ndarray:
    if not jitter:
        return np.full(n, model.C)
    return np.maximum(model.C + model.sigma_C * rng.standard_normal(n), 0.1 * model.C)


def _finish(chunks, W, H, model, seed, traj, header) -> EventStream:
    if chunks:
        t = np.concatenate([c[0] for c in chunks])
        pix = np.concatenate([c[1] for c in chunks])
        p = np.concatenate([c[2] for c in chunks]).astype(np.int8)
    else:
        t, pix, p = np.zeros(0), np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.int8)
    # file resolution is 1 ns; make memory match the file
    t = np.round(t, 9)
    order = np.lexsort((pix, t))
    t, pix, p = t[order], pix[order], p[order]
    t = _enforce_pixel_monotonic(t, pix)
    order = np.lexsort((pix, t))
    t, pix, p = t[order], pix[order], p[order]
    return EventStream(t, (pix % W).astype(np.int32), (pix // W).astype(np.int32), p, W, H,
                       model, seed, traj, header)


def _enforce_pixel_monotonic(t, pix):
    """Nudge coincident same-pixel timestamps apart by 1 ns."""
    by_pix = np.lexsort((t, pix))
    tp, pp = t[by_pix], pix[by_pix]
    clash = np.flatnonzero((pp[1:] == pp[:-1]) & (tp[1:] <= tp[:-1])) + 1
    if clash.size == 0:
        return t
    tp = tp.copy()
    # a nudge can create a new clash further along the same pixel
    for i in range(int(clash[0]), tp.size):
        if pp[i] == pp[i - 1] and tp[i] <= tp[i - 1]:
            tp[i] = round(tp[i - 1] + 1e-9, 9)
    out = np.empty_like(t)
    out[by_pix] = tp
    return out


# --- file formats ---------------------------------------------------------------


def _header_lines(first: str, extra: list[str] | None) -> str:
    lines = [first] + [f"# {line}" if line else "#" for line in (extra or [])]
    return "\n".join(lines) + "\n"


def write_event_stream(path, stream: EventStream, extra_header: list[str] | None = None) -> None:
    first = f"# width={stream.width} height={stream.height} C={stream.model.C!r} " \
            f"sigma_C={stream.model.sigma_C!r} seed={stream.seed}"
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_header_lines(first, extra_header))
        for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(),
                              stream.p.tolist()):
            fh.write(f"{t:.9f} {x} {y} {p}\n")


def _parse_kv_header(line: str) -> dict[str, str]:
    out = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            out[k] = v
    return out


def read_comment_header(path) -> list[str]:
    lines = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            lines.append(line.rstrip("\n"))
    return lines


def read_event_stream(path) -> EventStream:
    header = read_comment_header(path)
    if not header:
        raise DataError(f"{path}: missing event stream header")
    kv = _parse_kv_header(header[0])
    try:
        W, H = int(kv["width"]), int(kv["height"])
        C = float(kv["C"])
        sigma_C = float(kv.get("sigma_C", C / 4))
        seed = int(kv.get("seed", 0))
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed header {header[0]!r}") from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty stream
        data = np.loadtxt(path, comments="#", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 4))
    if data.shape[1] != 4:
        raise DataError(f"{path}: expected 4 columns 't x y p'")
    t = data[:, 0]
    if np.any(np.diff(t) < 0):
        raise DataError(f"{path}: timestamps are not sorted")
    return EventStream(t, data[:, 1].astype(np.int32), data[:, 2].astype(np.int32),
                       data[:, 3].astype(np.int8), W, H, ContrastModel(C, sigma_C), seed,
                       None, kv)


TRAJECTORY_COLUMNS = "t tx ty tz rx ry rz vx vy vz wx wy wz"


def write_trajectory(path, traj: Trajectory, extra_header: list[str] | None = None) -> None:
    data = np.hstack([traj.times[:, None], traj.states()])
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(_header_lines(f"# {TRAJECTORY_COLUMNS}", extra_header))
        for row in data.tolist():
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def read_trajectory(path) -> Trajectory:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 13:
        raise DataError(f"{path}: expected 13 columns '{TRAJECTORY_COLUMNS}'")
    return Trajectory(data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:10], data[:, 10:13])

