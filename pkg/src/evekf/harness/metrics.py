"""Tracking errors of a run report against ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoOverlap
from ..geometry import _log_so3_unchecked, exp_so3
from ..simulator import Trajectory

METRICS_COLUMNS = "t rel_pos_err rel_vel_err rot_err_rad".split()


def interpolate_ground_truth(traj: Trajectory, times) -> np.ndarray:
    """States ``(N, 12)`` at ``times``: linear in t, v, w and geodesic in rotation."""
    times = np.asarray(times, dtype=float)
    tt = traj.times
    k = np.clip(np.searchsorted(tt, times, side="right") - 1, 0, max(tt.size - 2, 0))
    if tt.size == 1:
        return np.repeat(traj.states(), times.size, axis=0)
    t0, t1 = tt[k], tt[k + 1]
    s = np.clip((times - t0) / (t1 - t0), 0.0, 1.0)[:, None]
    out = np.empty((times.size, 12))
    for cols, arr in ((slice(0, 3), traj.positions), (slice(6, 9), traj.velocities),
                      (slice(9, 12), traj.omegas)):
        out[:, cols] = (1 - s) * arr[k] + s * arr[k + 1]
    R0 = exp_so3(traj.rotvecs[k])
    R1 = exp_so3(traj.rotvecs[k + 1])
    step = _log_so3_unchecked(R1 @ np.swapaxes(R0, -1, -2))
    out[:, 3:6] = _log_so3_unchecked(exp_so3(s * step) @ R0)
    return out


def path_length(traj: Trajectory, times) -> np.ndarray:
    """Arc length of the (piecewise linear) ground-truth path from its start to ``times``."""
    seg = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return np.interp(np.asarray(times, dtype=float), traj.times, cum)


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.where(num > 0, np.inf, 0.0)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class TrackingMetrics:
    t: np.ndarray
    rel_pos_err: np.ndarray
    rel_vel_err: np.ndarray
    rot_err_rad: np.ndarray
    window: float = 0.7

    def __len__(self) -> int:
        return self.t.size

    def rows(self) -> list[list[float]]:
        return np.column_stack([self.t, self.rel_pos_err, self.rel_vel_err,
                                self.rot_err_rad]).tolist()

    def window_slice(self) -> slice:
        """Final ``window`` fraction of the snapshots (snapshots are evenly spaced in events)."""
        n = len(self)
        return slice(min(n - 1, int(np.floor((1.0 - self.window) * (n - 1)))), n)

    def aggregates(self) -> dict[str, float]:
        sl = self.window_slice()
        out = {}
        for name in METRICS_COLUMNS[1:]:
            vals = getattr(self, name)[sl]
            out[f"median_{name}"] = float(np.median(vals))
            out[f"p95_{name}"] = float(np.quantile(vals, 0.95))
        return out


def evaluate(report, traj: Trajectory, window: float = 0.7, tol: float = 1e-9) -> TrackingMetrics:
    """``report`` rows follow the run-report columns ``t tx .. wz [trace_cov n_skipped]``."""
    rep = np.atleast_2d(np.asarray(report, dtype=float))
    if rep.size == 0:
        raise NoOverlap("empty run report")
    t = rep[:, 0]
    keep = (t >= traj.t0 - tol) & (t <= traj.t_end + tol)
    if not keep.any():
        raise NoOverlap(f"report spans [{t.min():.6f}, {t.max():.6f}] s, ground truth "
                        f"[{traj.t0:.6f}, {traj.t_end:.6f}] s")
    rep = rep[keep]
    t = rep[:, 0]
    gt = interpolate_ground_truth(traj, t)
    pos = np.linalg.norm(rep[:, 1:4] - gt[:, :3], axis=1)
    vel = np.linalg.norm(rep[:, 7:10] - gt[:, 6:9], axis=1)
    dR = exp_so3(rep[:, 4:7]) @ np.swapaxes(exp_so3(gt[:, 3:6]), -1, -2)
    rot = np.linalg.norm(_log_so3_unchecked(dR), axis=-1)
    return TrackingMetrics(t, _ratio(pos, path_length(traj, t)),
                           _ratio(vel, np.linalg.norm(gt[:, 6:9], axis=1)), rot, window)
