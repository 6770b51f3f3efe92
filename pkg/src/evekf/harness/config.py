"""Experiment configuration: one INI file drives simulate, calibrate, track and evaluate.

Relative paths are resolved against the config file's directory. The resolved
config (every key, absolute paths) is what gets embedded in output headers, so
any output file can itself be passed back as ``--config``.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..event_model import ContrastModel
from ..filter import FilterConfig
from ..geometry import CameraIntrinsics, PlanarScene, Pose
from ..scene_map import build_map, centered_origin, read_pgm, smooth_map
from ..simulator import Trajectory, make_const_accel_trajectory

CONFIG_MARKER = "resolved config:"

DEFAULTS = {
    "scene": {
        "texture": "",
        "texel_size": "0.004",
        "smoothing": "2.0",
        "intensity_floor": "1.0",
        "plane_t": "0 0 0.5",
        "plane_r": "0 0 0",
    },
    "camera": {
        "width": "128",
        "height": "128",
        "fx": "65.0",
        "fy": "65.0",
        "cx": "63.5",
        "cy": "63.5",
    },
    "trajectory": {
        "type": "const_accel",
        "p0": "0 0 0",
        "r0": "0 0 0",
        "v0": "0.1 0 0",
        "accel": "0 0 0",
        "omega": "0 0 0",
        "duration": "1.0",
        "rate": "200",
    },
    "simulator": {
        "C": "0.15",
        "sigma_C": "0.0375",
        "frame_rate": "1000",
        "policy": "level-crossing",
        "seed": "0",
        "jitter": "true",
        "events_per_interval": "500",
        "interval": "0.008",
        "sampling": "uniform",
    },
    "calibrate": {
        "num_events": "2000",
        "central_mass": "0.9",
        "bins": "40",
    },
    "filter": {
        "contrast": "nominal",
        "sigma_v": "0.1",
        "sigma_w": "0.1",
        "sigma0_t": "0.01",
        "sigma0_r_deg": "1.0",
        "sigma0_v": "0.05",
        "sigma0_w": "0.05",
        "packet_size": "1",
        "patch_size": "15",
        "snapshot_every": "500",
        "max_events": "0",
        "initial_offset": "0 0 0",
    },
    "evaluate": {
        "window": "0.7",
    },
    "output": {
        "dir": "out",
        "events": "events.txt",
        "trajectory": "trajectory.txt",
        "contrast": "contrast.ini",
        "histogram": "histogram.csv",
        "report": "report.csv",
        "metrics": "metrics.csv",
        "plotdata": "plotdata.csv",
    },
}

TRAJECTORY_TYPES = ("const_accel", "const_velocity")
POLICIES = ("level-crossing", "paper-subtract-sample")
SAMPLINGS = ("uniform", "proportional")
CONTRAST_SOURCES = ("nominal", "calibrated")


def _vec(text: str, n: int = 3, what: str = "value") -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected {n} numbers, got {text!r}") from None
    if len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {text!r}")
    return np.array(vals)


@dataclass(frozen=True)
class ExperimentConfig:
    parser: configparser.ConfigParser
    source: Path | None = None

    # --- raw access ---------------------------------------------------------------

    def get(self, section: str, key: str) -> str:
        return self.parser.get(section, key)

    def _float(self, section: str, key: str, positive: bool = False, nonneg: bool = False) -> float:
        try:
            v = self.parser.getfloat(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not a number: {self.get(section, key)!r}") from None
        if not math.isfinite(v) or (positive and v <= 0) or (nonneg and v < 0):
            raise ConfigError(f"[{section}] {key} = {v} is out of range")
        return v

    def _int(self, section: str, key: str, minimum: int | None = None) -> int:
        try:
            v = self.parser.getint(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not an integer: {self.get(section, key)!r}") from None
        if minimum is not None and v < minimum:
            raise ConfigError(f"[{section}] {key} = {v} must be >= {minimum}")
        return v

    def _choice(self, section: str, key: str, options) -> str:
        v = self.get(section, key).strip()
        if v not in options:
            raise ConfigError(f"[{section}] {key} = {v!r}; choose one of {', '.join(options)}")
        return v

    def _v3(self, section: str, key: str) -> np.ndarray:
        return _vec(self.get(section, key), 3, f"[{section}] {key}")

    @property
    def seed(self) -> int:
        return self._int("simulator", "seed", 0)

    # --- typed views ----------------------------------------------------------------

    def intrinsics(self) -> CameraIntrinsics:
        try:
            return CameraIntrinsics(
                self._float("camera", "fx"), self._float("camera", "fy"),
                self._float("camera", "cx"), self._float("camera", "cy"),
                self._int("camera", "width", 1), self._int("camera", "height", 1))
        except ValueError as exc:
            raise ConfigError(f"[camera] {exc}") from None

    def texture_path(self) -> Path:
        text = self.get("scene", "texture").strip()
        if not text:
            raise ConfigError("[scene] texture is not set")
        return Path(text)

    def scene(self) -> PlanarScene:
        self.validate_files()
        img = read_pgm(self.texture_path())
        s = self._float("scene", "texel_size", positive=True)
        m = build_map(img, s, floor=self._float("scene", "intensity_floor", positive=True),
                      origin=centered_origin(img.shape, s))
        m = smooth_map(m, self._float("scene", "smoothing", nonneg=True))
        return PlanarScene(Pose(self._v3("scene", "plane_t"), self._v3("scene", "plane_r")), m)

    def trajectory(self) -> Trajectory:
        kind = self._choice("trajectory", "type", TRAJECTORY_TYPES)
        p0 = Pose(self._v3("trajectory", "p0"), self._v3("trajectory", "r0"))
        accel = self._v3("trajectory", "accel") if kind == "const_accel" else np.zeros(3)
        return make_const_accel_trajectory(
            p0, self._v3("trajectory", "v0"), accel,
            self._float("trajectory", "duration", nonneg=True),
            self._float("trajectory", "rate", positive=True),
            omega=self._v3("trajectory", "omega"))

    def contrast_model(self) -> ContrastModel:
        return ContrastModel(self._float("simulator", "C", positive=True),
                             self._float("simulator", "sigma_C", positive=True))

    def simulator_kwargs(self) -> dict:
        return {
            "frame_rate": self._float("simulator", "frame_rate", positive=True),
            "policy": self._choice("simulator", "policy", POLICIES),
            "seed": self.seed,
            "jitter": self.parser.getboolean("simulator", "jitter"),
            "events_per_interval": self._int("simulator", "events_per_interval", 1),
            "interval": self._float("simulator", "interval", positive=True),
            "sampling": self._choice("simulator", "sampling", SAMPLINGS),
        }

    def filter_config(self) -> FilterConfig:
        f = "filter"
        patch = self._int(f, "patch_size", 3)
        if patch % 2 == 0:
            raise ConfigError("[filter] patch_size must be odd")
        return FilterConfig(
            sigma_v=self._float(f, "sigma_v", nonneg=True),
            sigma_w=self._float(f, "sigma_w", nonneg=True),
            sigma0_t=self._float(f, "sigma0_t", nonneg=True),
            sigma0_r=math.radians(self._float(f, "sigma0_r_deg", nonneg=True)),
            sigma0_v=self._float(f, "sigma0_v", nonneg=True),
            sigma0_w=self._float(f, "sigma0_w", nonneg=True),
            packet_size=self._int(f, "packet_size", 1),
            patch_size=patch,
            snapshot_every=self._int(f, "snapshot_every", 1),
        )

    def contrast_source(self) -> str:
        return self._choice("filter", "contrast", CONTRAST_SOURCES)

    def max_events(self) -> int:
        return self._int("filter", "max_events", 0)

    def initial_offset(self) -> np.ndarray:
        return self._v3("filter", "initial_offset")

    def calibrate_kwargs(self) -> dict:
        mass = self._float("calibrate", "central_mass", positive=True)
        if mass > 1:
            raise ConfigError("[calibrate] central_mass must be in (0, 1]")
        return {"central_mass": mass, "bins": self._int("calibrate", "bins", 1)}

    def calibrate_count(self) -> int:
        return self._int("calibrate", "num_events", 1)

    def window(self) -> float:
        w = self._float("evaluate", "window", positive=True)
        if w > 1:
            raise ConfigError("[evaluate] window must be in (0, 1]")
        return w

    def output(self, key: str) -> Path:
        return Path(self.get("output", "dir")) / self.get("output", key)

    # --- serialization ----------------------------------------------------------------

    def to_text(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue().rstrip("\n") + "\n"

    def header_lines(self) -> list[str]:
        """Comment lines (without ``#``) embedding the resolved config and seed."""
        return [f"seed={self.seed}", CONFIG_MARKER, *self.to_text().splitlines()]

    def validate_files(self) -> None:
        path = self.texture_path()
        if not path.is_file():
            raise ConfigError(f"[scene] texture file not found: {path}")


def _fresh_parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str  # keep key case (C, sigma_C)
    p.read_dict(DEFAULTS)
    return p


def _embedded_config(text: str) -> str | None:
    """Config text embedded in an output file's comment header, if any."""
    lines = []
    inside = False
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        body = line[1:]
        body = body[1:] if body.startswith(" ") else body
        if inside:
            lines.append(body)
        elif body.strip() == CONFIG_MARKER:
            inside = True
    return "\n".join(lines) if inside else None


def apply_override(parser: configparser.ConfigParser, item: str) -> None:
    """``section.key=value``."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    lhs, value = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"override {item!r}: unknown key [{section}] {key}")
    parser.set(section, key, value.strip())


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read an INI config, or the config embedded in an output file's header."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    embedded = _embedded_config(text)
    if embedded is not None:
        text = embedded
    parser = _fresh_parser()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
    for item in overrides:
        apply_override(parser, item)
    base = path.resolve().parent
    for section, key in (("scene", "texture"), ("output", "dir")):
        value = parser.get(section, key).strip()
        if value:
            parser.set(section, key, str((base / value).resolve()))
    return ExperimentConfig(parser, path)
