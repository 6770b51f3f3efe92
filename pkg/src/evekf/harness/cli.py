"""Command line entry point: ``evekf <command> --config FILE [--override section.key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 filter divergence.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, FilterDivergence
from ..event_model import ContrastModel, MapContext, estimate_threshold
from ..filter import REPORT_COLUMNS, Belief, process_stream, report_rows
from ..scene_map import noise_texture, stripe_texture, write_pgm
from ..simulator import (
    read_event_stream,
    read_trajectory,
    synthesize_events,
    write_event_stream,
    write_trajectory,
)
from .config import ExperimentConfig, load_config
from .metrics import METRICS_COLUMNS, TrackingMetrics, evaluate, interpolate_ground_truth

logger = logging.getLogger("evekf")

PLOT_COLUMNS = ("t tx ty tz vx vy vz gt_tx gt_ty gt_tz gt_vx gt_vy gt_vz "
                "rel_pos_err rel_vel_err rot_err_rad").split()


# --- small file helpers -----------------------------------------------------------


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header: list[str], columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n" if line else "#\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path, columns=None) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: missing column header")
    found = lines[0].strip().split(",")
    if columns is not None and found != list(columns):
        raise DataError(f"{path}: expected columns {','.join(columns)}, found {lines[0].strip()}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        return np.zeros((0, len(found)))
    try:
        return np.array([[float(v) for v in ln.split(",")] for ln in body])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _header(cfg: ExperimentConfig, command: str, extra=()) -> list[str]:
    return [f"evekf {command}", *extra, *cfg.header_lines()]


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise DataError(f"{what} not found: {path} (run the earlier pipeline stage first)")
    return path


def write_contrast_model(path, model: ContrastModel, n_used: int, header: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n" if line else "#\n")
        fh.write(f"[contrast]\nC = {model.C!r}\nsigma_C = {model.sigma_C!r}\nn_used = {n_used}\n")


def read_contrast_model(path) -> ContrastModel:
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    try:
        p.read_string(Path(_require(Path(path), "contrast model")).read_text(encoding="ascii"))
        return ContrastModel(p.getfloat("contrast", "C"), p.getfloat("contrast", "sigma_C"))
    except (configparser.Error, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


# --- commands -----------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig) -> None:
    """Render the map along the trajectory and write events + ground truth."""
    cfg.validate_files()
    traj = cfg.trajectory()
    stream = synthesize_events(traj, cfg.scene(), cfg.intrinsics(), cfg.contrast_model(),
                               **cfg.simulator_kwargs())
    out_ev, out_tr = cfg.output("events"), cfg.output("trajectory")
    out_ev.parent.mkdir(parents=True, exist_ok=True)
    write_event_stream(out_ev, stream, _header(cfg, "simulate"))
    write_trajectory(out_tr, traj, _header(cfg, "simulate"))
    duration = traj.t_end - traj.t0
    rate = len(stream) / duration if duration > 0 else 0.0
    print(f"events: {len(stream)}  duration: {duration:.3f} s  rate: {rate:.0f} ev/s")
    print(f"wrote {out_ev}\nwrote {out_tr}")


def cmd_calibrate(cfg: ExperimentConfig) -> ContrastModel:
    """Estimate the contrast threshold from the first events."""
    stream = read_event_stream(_require(cfg.output("events"), "event stream"))
    traj = read_trajectory(_require(cfg.output("trajectory"), "trajectory"))
    k = cfg.calibrate_count()
    if k > len(stream):
        logger.warning("calibrate: %d events requested, stream has %d; using all", k, len(stream))
    ctx = MapContext(cfg.scene(), cfg.intrinsics(), cfg.filter_config().patch_size)
    fit = estimate_threshold(stream.head(k), traj.state_at, ctx, **cfg.calibrate_kwargs())
    header = _header(cfg, "calibrate")
    write_contrast_model(cfg.output("contrast"), fit.model, fit.n_used, header)
    edges = fit.bin_edges
    write_csv(cfg.output("histogram"), header, ["bin_lo", "bin_hi", "density"],
              np.column_stack([edges[:-1], edges[1:], fit.density]))
    print(f"C = {fit.model.C:.6f}  sigma_C = {fit.model.sigma_C:.6f}  from {fit.n_used} contrasts")
    return fit.model


def cmd_track(cfg: ExperimentConfig):
    """Run the filter over the event stream and write a run report."""
    stream = read_event_stream(_require(cfg.output("events"), "event stream"))
    traj = read_trajectory(_require(cfg.output("trajectory"), "trajectory"))
    fcfg = cfg.filter_config()
    if cfg.contrast_source() == "calibrated":
        model = read_contrast_model(cfg.output("contrast"))
    else:
        model = stream.model
    n = cfg.max_events()
    if n > 0:
        stream = stream.head(n)
    mean = traj.state_at(traj.t0).copy()
    mean[:3] += cfg.initial_offset()
    b0 = Belief(mean, fcfg.initial_covariance())
    ctx = MapContext(cfg.scene(), cfg.intrinsics(), fcfg.patch_size)
    out = cfg.output("report")
    try:
        run = process_stream(stream, b0, ctx, model, fcfg, t0=traj.t0)
    except FilterDivergence as exc:
        write_csv(out, _header(cfg, "track", [f"diverged: {exc}"]), REPORT_COLUMNS,
                  report_rows(exc.run))
        raise
    skips = ", ".join(f"{k.value}={v}" for k, v in run.skipped.items())
    write_csv(out, _header(cfg, "track", [f"C={model.C!r} sigma_C={model.sigma_C!r}"]),
              REPORT_COLUMNS, report_rows(run))
    print(f"processed {run.n_events} events; skipped {run.n_skipped} ({skips})")
    print(f"wrote {out}")
    return run


def _load_metrics(cfg: ExperimentConfig) -> TrackingMetrics:
    rep = read_csv(_require(cfg.output("report"), "run report"), REPORT_COLUMNS)
    traj = read_trajectory(_require(cfg.output("trajectory"), "trajectory"))
    return evaluate(rep, traj, cfg.window())


def cmd_evaluate(cfg: ExperimentConfig) -> TrackingMetrics:
    """Compare a run report with ground truth."""
    m = _load_metrics(cfg)
    agg = m.aggregates()
    extra = [f"window=final {cfg.window():g} of snapshots"] + [f"{k}={v!r}" for k, v in agg.items()]
    write_csv(cfg.output("metrics"), _header(cfg, "evaluate", extra), METRICS_COLUMNS, m.rows())
    print(f"{'metric':<14}{'median':>12}{'p95':>12}   (final {cfg.window():.0%} of snapshots)")
    for name in METRICS_COLUMNS[1:]:
        print(f"{name:<14}{agg['median_' + name]:>12.5f}{agg['p95_' + name]:>12.5f}")
    return m


def cmd_plotdata(cfg: ExperimentConfig) -> None:
    """Write a tidy CSV for plotting."""
    rep = read_csv(_require(cfg.output("report"), "run report"), REPORT_COLUMNS)
    rows = []
    if rep.shape[0]:
        traj = read_trajectory(_require(cfg.output("trajectory"), "trajectory"))
        m = evaluate(rep, traj, cfg.window())
        keep = np.isin(rep[:, 0], m.t)
        rep = rep[keep]
        gt = interpolate_ground_truth(traj, rep[:, 0])
        rows = np.column_stack([rep[:, 0], rep[:, 1:4], rep[:, 7:10], gt[:, :3], gt[:, 6:9],
                                m.rel_pos_err, m.rel_vel_err, m.rot_err_rad])
    out = cfg.output("plotdata")
    write_csv(out, _header(cfg, "plotdata"), PLOT_COLUMNS, rows)
    print(f"wrote {out} ({len(rows)} rows)")


def cmd_pipeline(cfg: ExperimentConfig) -> None:
    """Simulate, calibrate, track, evaluate and plotdata in one go."""
    cmd_simulate(cfg)
    cmd_calibrate(cfg)
    cmd_track(cfg)
    cmd_evaluate(cfg)
    cmd_plotdata(cfg)


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "plotdata": cmd_plotdata,
    "pipeline": cmd_pipeline,
}


def cmd_texture(args) -> None:
    shape = (args.size, args.size)
    if args.kind == "noise":
        img = noise_texture(shape, args.scale, args.seed)
    else:
        img = stripe_texture(shape, args.scale, args.seed, orientations=tuple(args.orientations))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # 16-bit output keeps the gray levels exact
    write_pgm(out, img * 257.0, maxval=65535)
    print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evekf", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.rstrip("."))
        p.add_argument("--config", required=True,
                       help="INI config, or any output file whose header embeds one")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p = sub.add_parser("texture", help="Write a synthetic 16-bit PGM texture")
    p.add_argument("--kind", choices=("noise", "stripes"), default="noise")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--scale", type=float, default=12.0,
                   help="feature sigma (noise) or mean stripe width (stripes), in texels")
    p.add_argument("--orientations", type=float, nargs="+", default=[0.0], metavar="DEG")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap



def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "texture":
            cmd_texture(args)
            return 0
        cfg = load_config(args.config, args.override)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FilterDivergence as exc:
        print(f"filter diverged: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
