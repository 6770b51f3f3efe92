"""Dense photometric map of a plane and rendering it into the camera."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, EmptyImage, InsufficientSupport, NoVisiblePixels, OutsideMap
from .geometry import CameraIntrinsics, PlanarScene, Pose, cast_rays


@dataclass(frozen=True)
class DenseMap:
    """Log-intensity texture on a regular grid.

    ``grid[row, col]`` is the texel centered at in-plane coordinates
    ``origin + (col, row) * texel_size``.
    """

    grid: np.ndarray
    texel_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 2 or min(grid.shape) < 2:
            raise EmptyImage("map grid must be at least 2x2")
        if not np.all(np.isfinite(grid)):
            raise DataError("map grid contains non-finite values")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def extent(self) -> tuple[float, float]:
        """Width and height in meters between the outermost texel centers."""
        h, w = self.grid.shape
        return ((w - 1) * self.texel_size, (h - 1) * self.texel_size)

    def texel_coords(self, a, b):
        return (
            (np.asarray(a, dtype=float) - self.origin[0]) / self.texel_size,
            (np.asarray(b, dtype=float) - self.origin[1]) / self.texel_size,
        )

    def contains(self, a, b):
        col, row = self.texel_coords(a, b)
        h, w = self.grid.shape
        return (col >= 0) & (col <= w - 1) & (row >= 0) & (row <= h - 1)


def centered_origin(shape, texel_size: float) -> tuple[float, float]:
    """Origin placing the texture's center at the plane's origin."""
    h, w = shape
    return (-(w - 1) * texel_size / 2.0, -(h - 1) * texel_size / 2.0)


def build_map(image, texel_size: float, floor: float = 1.0, origin=None) -> DenseMap:
    image = np.asarray(image, dtype=float)
    if image.size == 0:
        raise EmptyImage("empty image")
    if np.any(image < 0):
        raise DataError("gray levels must be non-negative")
    if origin is None:
        origin = (0.0, 0.0)
    return DenseMap(np.log(np.maximum(image, floor)), texel_size, origin)


def smooth_map(m: DenseMap, sigma: float) -> DenseMap:
    """Gaussian blur of the log-intensity grid (reflective boundary)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return m
    blurred = ndimage.gaussian_filter(np.array(m.grid), sigma=sigma, mode="reflect", truncate=4.0)
    return replace(m, grid=blurred)


def sample_bilinear(m: DenseMap, a, b):
    """Vectorized bilinear lookup. Returns ``(values, valid)``; invalid entries are 0."""
    col, row = m.texel_coords(a, b)
    h, w = m.grid.shape
    valid = (col >= 0) & (col <= w - 1) & (row >= 0) & (row <= h - 1)
    col = np.where(valid, col, 0.0)
    row = np.where(valid, row, 0.0)
    c0 = np.minimum(np.floor(col).astype(np.intp), w - 2)
    r0 = np.minimum(np.floor(row).astype(np.intp), h - 2)
    fc = col - c0
    fr = row - r0
    g = m.grid
    top = g[r0, c0] * (1.0 - fc) + g[r0, c0 + 1] * fc
    bot = g[r0 + 1, c0] * (1.0 - fc) + g[r0 + 1, c0 + 1] * fc
    vals = top * (1.0 - fr) + bot * fr
    return np.where(valid, vals, 0.0), valid


def sample_log_intensity(m: DenseMap, p) -> float:
    """Log intensity at in-plane point ``p = (a, b)`` in meters."""
    vals, valid = sample_bilinear(m, np.asarray([p[0]]), np.asarray([p[1]]))
    if not valid[0]:
        raise OutsideMap(f"point {tuple(p)} outside map extent")
    return float(vals[0])


@dataclass(frozen=True)
class RenderedView:
    """Map rendered over a pixel window.

    Arrays are indexed ``[y - y0, x - x0]`` for sensor pixel ``(x, y)``.
    """

    log_intensity: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    K: CameraIntrinsics
    x0: int = 0
    y0: int = 0

    def index(self, x: int, y: int) -> tuple[int, int]:
        return y - self.y0, x - self.x0


def render_pixels(scene: PlanarScene, t, R, K: CameraIntrinsics, xy):
    """Log intensity and depth at pixels ``xy (M, 2)`` for poses ``t (N, 3)``, ``R (N, 3, 3)``."""
    _, depth, ab, valid = cast_rays(xy, t, R, K, scene)
    vals, inside = sample_bilinear(scene.texture, ab[..., 0], ab[..., 1])
    valid = valid & inside
    return np.where(valid, vals, 0.0), np.where(valid, depth, 0.0), valid


def render(scene: PlanarScene, pose: Pose, K: CameraIntrinsics, roi=None) -> RenderedView:
    """Render the map from ``pose``.

    ``roi = (x0, y0, width, height)`` restricts rendering to a pixel window;
    the window may extend past the sensor edge (virtual pixels are still
    well-defined rays). Without ``roi`` the whole sensor is rendered.
    """
    if roi is None:
        x0, y0, w, h = 0, 0, K.width, K.height
    else:
        x0, y0, w, h = (int(v) for v in roi)
    ys, xs = np.mgrid[y0 : y0 + h, x0 : x0 + w]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(float)
    vals, depth, valid = render_pixels(scene, pose.t[None], pose.R[None], K, xy)
    if not np.any(valid):
        raise NoVisiblePixels("no pixel of the view sees the map")
    return RenderedView(
        vals.reshape(h, w), depth.reshape(h, w), valid.reshape(h, w), K, x0, y0
    )


def stencil_gradient(L, K: CameraIntrinsics):
    """Central-difference gradient at the middle of 3x3 patches ``L (..., 3, 3)``.

    Returned per normalized image unit: pixel differences scaled by (fx, fy).
    """
    gx = 0.5 * (L[..., 1, 2] - L[..., 1, 0]) * K.fx
    gy = 0.5 * (L[..., 2, 1] - L[..., 0, 1]) * K.fy
    return np.stack([gx, gy], axis=-1)


def gradient_at(view: RenderedView, pixel) -> np.ndarray:
    x, y = int(pixel[0]), int(pixel[1])
    i, j = view.index(x, y)
    h, w = view.mask.shape
    if not (1 <= i < h - 1 and 1 <= j < w - 1) or not view.mask[i - 1 : i + 2, j - 1 : j + 2].all():
        raise InsufficientSupport(f"pixel {(x, y)} lacks a valid 3x3 neighborhood")
    return stencil_gradient(view.log_intensity[i - 1 : i + 2, j - 1 : j + 2], view.K)


# --- textures -----------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with 8- or 16-bit samples."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (P5)")
    width, height, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    if len(data) - pos < count * dtype.itemsize:
        raise DataError(f"{path}: truncated PGM")
    img = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return img.reshape(height, width).astype(float)


def write_pgm(path, image, maxval: int = 65535) -> None:
    image = np.asarray(image)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    pix = np.clip(np.rint(image), 0, maxval).astype(dtype)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(pix.tobytes())


def noise_texture(shape=(512, 512), feature_sigma: float = 6.0, seed: int = 0,
                  lo: float = 20.0, hi: float = 235.0) -> np.ndarray:
    """Smooth random gray-level texture spanning ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.standard_normal(shape), feature_sigma, mode="wrap")
    img = (img - img.min()) / (img.max() - img.min())
    return lo + (hi - lo) * img


def stripe_texture(shape=(512, 512), mean_width: float = 14.0, seed: int = 0,
                   orientations=(0.0,), lo: float = 20.0, hi: float = 235.0) -> np.ndarray:
    """Black/white stripes of random widths ("barcode"), XOR-combined over orientations.

    Orientation 0 gives vertical stripes (intensity varies along columns only).
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    diag = int(np.hypot(h, w)) + 2
    pattern = np.zeros(shape, dtype=bool)
    for angle in orientations:
        widths = rng.exponential(mean_width, size=diag) + 3.0
        edges = np.cumsum(widths) - diag
        c, s = np.cos(np.radians(angle)), np.sin(np.radians(angle))
        coord = (cols - w / 2) * c + (rows - h / 2) * s
        band = np.searchsorted(edges, coord)
        pattern ^= (band % 2).astype(bool)
    return np.where(pattern, hi, lo)
