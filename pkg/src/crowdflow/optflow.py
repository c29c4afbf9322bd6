"""Dense two-frame optical flow via local polynomial expansion over a pyramid.

Each frame neighborhood is fitted with a quadratic model f(x) ~ x'Ax + b'x + c
under Gaussian applicability weights; the displacement relating the two
frames' models is solved per pixel with least-squares averaging over a square
window, refined coarse-to-fine across a Gaussian image pyramid.

All internal arithmetic is float64; flow rasters are stored float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .frameio import resize_bilinear

_DET_EPSILON = 1e-9
_PYR_BLUR = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_FLO_MAGIC = b"FLO1"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@dataclass(frozen=True)
class FlowParams:
    """Estimation parameters; the defaults are fixed for reproducible runs."""

    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_radius: int = 7
    iterations_per_level: int = 3
    poly_radius: int = 3
    poly_sigma: float = 1.1

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError("pyramid_scale must be in (0, 1)")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.iterations_per_level < 1:
            raise ValueError("iterations_per_level must be >= 1")
        if self.poly_radius < 1:
            raise ValueError("poly_radius must be >= 1")
        if self.poly_sigma <= 0.0:
            raise ValueError("poly_sigma must be positive")


@dataclass(frozen=True)
class PolyExpansion:
    """Per-pixel quadratic-model coefficients (A symmetric 2x2, b 2-vector, c)."""

    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.c.shape


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field: dx along columns, dy along rows."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape:
            raise ValueError(f"dx {self.dx.shape} and dy {self.dy.shape} differ")

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]


@dataclass(frozen=True)
class MotionStats:
    mean_magnitude: float
    max_magnitude: float


@dataclass(frozen=True)
class ExpansionPyramid:
    """Cached per-level expansions of one frame, finest level first.

    Event-driven sampling compares many frames against one reference, so
    reusing the reference's pyramid halves the expansion work per pair.
    """

    levels: Sequence[PolyExpansion] = field(repr=False)
    shape: tuple[int, int] = (0, 0)


# ---------------------------------------------------------------------------
# Polynomial expansion
# ---------------------------------------------------------------------------

def _applicability(poly_radius: int, poly_sigma: float) -> tuple[np.ndarray, np.ndarray]:
    offsets = np.arange(-poly_radius, poly_radius + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * poly_sigma**2))
    return g / g.sum(), offsets


def _metric_inverse(g: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Inverse of the 6x6 normal matrix for basis [1, x, y, x^2, y^2, xy]."""
    xx, yy = np.meshgrid(offsets, offsets)
    w = np.outer(g, g)
    basis = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy])
    metric = np.einsum("ikl,jkl->ij", basis * w, basis)
    return np.linalg.inv(metric)


def poly_expand(frame: np.ndarray, poly_radius: int = 3, poly_sigma: float = 1.1) -> PolyExpansion:
    """Weighted least-squares quadratic fit at every pixel.

    Separable correlations with the Gaussian applicability compute the six
    basis projections; a single precomputed 6x6 inverse turns them into model
    coefficients.  Borders are replicate-padded.
    """
    frame = np.asarray(frame, dtype=np.float64)
    size = 2 * poly_radius + 1
    if frame.shape[0] <= size or frame.shape[1] <= size:
        raise ValueError(
            f"frame {frame.shape} too small for poly_radius {poly_radius} "
            f"(needs more than {size} pixels per side)"
        )
    g, offsets = _applicability(poly_radius, poly_sigma)
    kx = offsets * g
    kxx = offsets**2 * g

    t0 = ndimage.correlate1d(frame, g, axis=1, mode="nearest")
    t1 = ndimage.correlate1d(frame, kx, axis=1, mode="nearest")
    t2 = ndimage.correlate1d(frame, kxx, axis=1, mode="nearest")

    proj = np.empty((6,) + frame.shape, dtype=np.float64)
    proj[0] = ndimage.correlate1d(t0, g, axis=0, mode="nearest")      # 1
    proj[1] = ndimage.correlate1d(t1, g, axis=0, mode="nearest")      # x
    proj[2] = ndimage.correlate1d(t0, kx, axis=0, mode="nearest")     # y
    proj[3] = ndimage.correlate1d(t2, g, axis=0, mode="nearest")      # x^2
    proj[4] = ndimage.correlate1d(t0, kxx, axis=0, mode="nearest")    # y^2
    proj[5] = ndimage.correlate1d(t1, kx, axis=0, mode="nearest")     # xy

    r = np.tensordot(_metric_inverse(g, offsets), proj, axes=1)
    return PolyExpansion(c=r[0], b1=r[1], b2=r[2], a11=r[3], a22=r[4], a12=0.5 * r[5])


# ---------------------------------------------------------------------------
# Pyramid
# ---------------------------------------------------------------------------

def _downscale(frame: np.ndarray, scale: float) -> np.ndarray:
    blurred = ndimage.correlate1d(frame, _PYR_BLUR, axis=0, mode="nearest")
    blurred = ndimage.correlate1d(blurred, _PYR_BLUR, axis=1, mode="nearest")
    if scale == 0.5:
        return blurred[::2, ::2]
    h, w = frame.shape
    return resize_bilinear(blurred, max(int(round(w * scale)), 1), max(int(round(h * scale)), 1))


def _pyramid(frame: np.ndarray, params: FlowParams) -> list[np.ndarray]:
    """Gaussian pyramid, finest first; levels stop before dropping below 8x8."""
    levels = [np.asarray(frame, dtype=np.float64)]
    while len(levels) < params.pyramid_levels:
        nxt = _downscale(levels[-1], params.pyramid_scale)
        if min(nxt.shape) < 8:
            break
        levels.append(nxt)
    return levels


def expansion_pyramid(frame: np.ndarray, params: FlowParams) -> ExpansionPyramid:
    """Precompute the per-level polynomial expansions of one frame."""
    expansions = [
        poly_expand(level, params.poly_radius, params.poly_sigma)
        for level in _pyramid(frame, params)
    ]
    return ExpansionPyramid(levels=expansions, shape=tuple(frame.shape))


# ---------------------------------------------------------------------------
# Displacement estimation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pointwise_normal(a11_1, a12_1, a22_1, b1_1, b2_1,
                      a11_2, a12_2, a22_2, b1_2, b2_2,
                      dx, dy, out):  # pragma: no cover - compiled
    """Warp the second expansion by the current flow and build, per pixel,
    the normal-equation terms of min ||A d - db||^2 into out[0..4]
    (g11, g12, g22, h1, h2).  Bilinear sampling with replicate borders;
    the four corner weights are shared across the five coefficient rasters.
    """
    h, w = dx.shape
    for y in range(h):
        for x in range(w):
            dxv = dx[y, x]
            dyv = dy[y, x]
            cy = y + dyv
            cx = x + dxv
            if cy < 0.0:
                cy = 0.0
            elif cy > h - 1:
                cy = h - 1
            if cx < 0.0:
                cx = 0.0
            elif cx > w - 1:
                cx = w - 1
            y0 = int(cy)
            x0 = int(cx)
            if y0 > h - 2:
                y0 = h - 2
            if x0 > w - 2:
                x0 = w - 2
            fy = cy - y0
            fx = cx - x0
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            y1 = y0 + 1
            x1 = x0 + 1

            s_a11 = (w00 * a11_2[y0, x0] + w01 * a11_2[y0, x1]
                     + w10 * a11_2[y1, x0] + w11 * a11_2[y1, x1])
            s_a12 = (w00 * a12_2[y0, x0] + w01 * a12_2[y0, x1]
                     + w10 * a12_2[y1, x0] + w11 * a12_2[y1, x1])
            s_a22 = (w00 * a22_2[y0, x0] + w01 * a22_2[y0, x1]
                     + w10 * a22_2[y1, x0] + w11 * a22_2[y1, x1])
            s_b1 = (w00 * b1_2[y0, x0] + w01 * b1_2[y0, x1]
                    + w10 * b1_2[y1, x0] + w11 * b1_2[y1, x1])
            s_b2 = (w00 * b2_2[y0, x0] + w01 * b2_2[y0, x1]
                    + w10 * b2_2[y1, x0] + w11 * b2_2[y1, x1])

            a11 = 0.5 * (a11_1[y, x] + s_a11)
            a12 = 0.5 * (a12_1[y, x] + s_a12)
            a22 = 0.5 * (a22_1[y, x] + s_a22)
            db1 = -0.5 * (s_b1 - b1_1[y, x]) + a11 * dxv + a12 * dyv
            db2 = -0.5 * (s_b2 - b2_1[y, x]) + a12 * dxv + a22 * dyv

            out[0, y, x] = a11 * a11 + a12 * a12
            out[1, y, x] = a12 * (a11 + a22)
            out[2, y, x] = a12 * a12 + a22 * a22
            out[3, y, x] = a11 * db1 + a12 * db2
            out[4, y, x] = a12 * db1 + a22 * db2


@njit(cache=True)
def _box_blur_planes(planes, radius):  # pragma: no cover - compiled
    """In-place (2r+1)^2 box mean of each plane, replicate borders.

    Sliding clamped-window sums along rows then columns; matches
    ndimage.uniform_filter(mode="nearest") up to rounding.
    """
    n, h, w = planes.shape
    inv = 1.0 / (2 * radius + 1)
    tmp = np.empty((h, w), dtype=np.float64)
    for p in range(n):
        plane = planes[p]
        for y in range(h):
            s = (radius + 1) * plane[y, 0]
            for k in range(1, radius + 1):
                s += plane[y, k if k < w else w - 1]
            tmp[y, 0] = s * inv
            for x in range(1, w):
                hi = x + radius
                lo = x - radius - 1
                s += plane[y, hi if hi < w else w - 1]
                s -= plane[y, lo if lo > 0 else 0]
                tmp[y, x] = s * inv
        for x in range(w):
            s = (radius + 1) * tmp[0, x]
            for k in range(1, radius + 1):
                s += tmp[k if k < h else h - 1, x]
            plane[0, x] = s * inv
            for y in range(1, h):
                hi = y + radius
                lo = y - radius - 1
                s += tmp[hi if hi < h else h - 1, x]
                s -= tmp[lo if lo > 0 else 0, x]
                plane[y, x] = s * inv


@njit(cache=True)
def _solve_window_system(normal, dx, dy, eps):  # pragma: no cover - compiled
    """Per-pixel 2x2 solve of the blurred normal equations, in place.

    Pixels whose determinant falls below eps keep their current flow.
    """
    h, w = dx.shape
    for y in range(h):
        for x in range(w):
            g11 = normal[0, y, x]
            g12 = normal[1, y, x]
            g22 = normal[2, y, x]
            det = g11 * g22 - g12 * g12
            if abs(det) >= eps:
                h1 = normal[3, y, x]
                h2 = normal[4, y, x]
                dx[y, x] = (g22 * h1 - g12 * h2) / det
                dy[y, x] = (g11 * h2 - g12 * h1) / det


def _pointwise_normal_numpy(e1: PolyExpansion, e2: PolyExpansion,
                            dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Fallback for _pointwise_normal built from ndimage primitives."""
    h, w = dx.shape
    coords = np.empty((2, h, w), dtype=np.float64)
    coords[0] = dy
    coords[0] += np.arange(h, dtype=np.float64)[:, None]
    coords[1] = dx
    coords[1] += np.arange(w, dtype=np.float64)[None, :]

    def warp(raster: np.ndarray) -> np.ndarray:
        return ndimage.map_coordinates(raster, coords, order=1, mode="nearest")

    a11 = 0.5 * (e1.a11 + warp(e2.a11))
    a12 = 0.5 * (e1.a12 + warp(e2.a12))
    a22 = 0.5 * (e1.a22 + warp(e2.a22))
    db1 = -0.5 * (warp(e2.b1) - e1.b1) + a11 * dx + a12 * dy
    db2 = -0.5 * (warp(e2.b2) - e1.b2) + a12 * dx + a22 * dy
    return np.stack([
        a11 * a11 + a12 * a12,
        a12 * (a11 + a22),
        a12 * a12 + a22 * a22,
        a11 * db1 + a12 * db2,
        a12 * db1 + a22 * db2,
    ])


def _displacement_update(
    e1: PolyExpansion,
    e2: PolyExpansion,
    dx: np.ndarray,
    dy: np.ndarray,
    window_radius: int,
) -> tuple[np.ndarray, np.ndarray]:
    """One least-squares displacement refinement given the current flow.

    The per-window system averages the normal equations of A d = db rather
    than A itself; averaging A would let its sign-varying entries cancel on
    texture and send the solve unstable.
    """
    if _HAVE_NUMBA:
        normal = np.empty((5,) + dx.shape, dtype=np.float64)
        _pointwise_normal(e1.a11, e1.a12, e1.a22, e1.b1, e1.b2,
                          e2.a11, e2.a12, e2.a22, e2.b1, e2.b2,
                          dx, dy, normal)
        _box_blur_planes(normal, window_radius)
        new_dx = dx.copy()
        new_dy = dy.copy()
        _solve_window_system(normal, new_dx, new_dy, _DET_EPSILON)
        return new_dx, new_dy

    normal = _pointwise_normal_numpy(e1, e2, dx, dy)
    size = 2 * window_radius + 1
    for plane in normal:
        ndimage.uniform_filter(plane, size, mode="nearest", output=plane)
    g11, g12, g22, h1, h2 = normal

    det = g11 * g22 - g12 * g12
    ok = np.abs(det) >= _DET_EPSILON
    safe = np.where(ok, det, 1.0)
    new_dx = np.where(ok, (g22 * h1 - g12 * h2) / safe, dx)
    new_dy = np.where(ok, (g11 * h2 - g12 * h1) / safe, dy)
    return new_dx, new_dy


def flow_between(
    prev: ExpansionPyramid, nxt: ExpansionPyramid, params: FlowParams
) -> FlowField:
    """Coarse-to-fine flow from two precomputed expansion pyramids."""
    if prev.shape != nxt.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {nxt.shape}")
    if len(prev.levels) != len(nxt.levels):
        raise ValueError("expansion pyramids were built with different parameters")

    dx = dy = None
    for e1, e2 in zip(reversed(prev.levels), reversed(nxt.levels)):
        h, w = e1.shape
        if dx is None:
            dx = np.zeros((h, w), dtype=np.float64)
            dy = np.zeros((h, w), dtype=np.float64)
        else:
            dx = resize_bilinear(dx, w, h) / params.pyramid_scale
            dy = resize_bilinear(dy, w, h) / params.pyramid_scale
        for _ in range(params.iterations_per_level):
            dx, dy = _displacement_update(e1, e2, dx, dy, params.window_radius)
    return FlowField(dx=dx.astype(np.float32), dy=dy.astype(np.float32))


def farneback_flow(prev: np.ndarray, nxt: np.ndarray, params: FlowParams = FlowParams()) -> FlowField:
    """Dense displacement field mapping `prev` pixels onto `nxt`."""
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {nxt.shape}")
    return flow_between(expansion_pyramid(prev, params), expansion_pyramid(nxt, params), params)


# ---------------------------------------------------------------------------
# Magnitude reductions
# ---------------------------------------------------------------------------

def motion_magnitude(flow: FlowField) -> np.ndarray:
    """Per-pixel Euclidean displacement magnitude."""
    return np.hypot(flow.dx.astype(np.float64), flow.dy.astype(np.float64)).astype(np.float32)


def mean_motion(flow: FlowField) -> MotionStats:
    mag = np.hypot(flow.dx.astype(np.float64), flow.dy.astype(np.float64))
    return MotionStats(mean_magnitude=float(mag.mean()), max_magnitude=float(mag.max()))


# ---------------------------------------------------------------------------
# FLO1 debug serialization
# ---------------------------------------------------------------------------

def encode_flo(flow: FlowField) -> bytes:
    """16-byte header (magic, width, height, pad) + interleaved dx,dy float32 LE."""
    header = _FLO_MAGIC + struct.pack("<II4x", flow.width, flow.height)
    data = np.empty((flow.height, flow.width, 2), dtype="<f4")
    data[..., 0] = flow.dx
    data[..., 1] = flow.dy
    return header + data.tobytes()


def decode_flo(data: bytes) -> FlowField:
    if data[:4] != _FLO_MAGIC:
        raise ValueError("not a FLO1 container: bad magic")
    if len(data) < 16:
        raise ValueError("truncated FLO1 header")
    width, height = struct.unpack_from("<II", data, 4)
    expected = 16 + width * height * 8
    if len(data) < expected:
        raise ValueError(f"truncated FLO1 payload: expected {expected} bytes, got {len(data)}")
    raster = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=16)
    raster = raster.reshape(height, width, 2)
    return FlowField(dx=raster[..., 0].copy(), dy=raster[..., 1].copy())
