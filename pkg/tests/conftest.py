import numpy as np
import pytest

from evekf.event_model import MapContext
from evekf.geometry import CameraIntrinsics, PlanarScene, Pose
from evekf.scene_map import build_map, centered_origin, noise_texture, smooth_map

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


def make_scene(size=400, texel=0.004, d=0.5, feature=8.0, seed=0, smoothing=2.0):
    img = noise_texture((size, size), feature, seed)
    m = build_map(img, texel, origin=centered_origin(img.shape, texel))
    return PlanarScene(Pose((0, 0, d)), smooth_map(m, smoothing))


@pytest.fixture(scope="session")
def small_scene():
    return make_scene()


@pytest.fixture(scope="session")
def small_ctx(small_scene):
    return MapContext(small_scene, CameraIntrinsics(), patch_size=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
