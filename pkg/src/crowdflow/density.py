"""Crowd density maps: Gaussian rendering, blob counting, and map fusion.

A head annotation becomes a narrow isotropic Gaussian renormalized over its
truncated support, so each fully interior head contributes exactly 1.0 of
map mass and integrals count people.  Counting thresholds the map into blobs
(8-connected); fusion averages realizations that correlate with a consensus
anchor.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .frameio import atomic_write_bytes, atomic_write_text, encode_pgm

_DMP_MAGIC = b"DMP1"
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic Gaussian head kernel; truncation bounds its square support."""

    sigma: float = 2.0
    truncation_radius: float = 8.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.truncation_radius < 3.0 * self.sigma:
            raise ValueError(
                f"truncation_radius {self.truncation_radius} must be >= 3*sigma ({3 * self.sigma})"
            )


@dataclass(frozen=True)
class FusionConfig:
    accept_gamma: float = 0.5

    def __post_init__(self):
        if not -1.0 <= self.accept_gamma <= 1.0:
            raise ValueError("accept_gamma must be in [-1, 1]")


@dataclass(frozen=True)
class DensityMap:
    """Non-negative per-pixel density; sums approximate person counts."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"density map must be 2-D, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("density map contains non-finite values")
        if (self.values < 0).any():
            raise ValueError("density map contains negative values")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def integral(self) -> float:
        return float(self.values.sum())


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _kernel_patch(fx: float, fy: float, kernel: KernelSpec) -> tuple[np.ndarray, int, int]:
    """Renormalized Gaussian sampled on the truncated pixel grid around a
    continuous center (fx, fy); returns the patch and its top-left corner.
    Renormalization runs over the full support before any raster clipping,
    so interior kernels integrate to exactly 1."""
    r = kernel.truncation_radius
    x_lo = math.ceil(fx - r)
    x_hi = math.floor(fx + r)
    y_lo = math.ceil(fy - r)
    y_hi = math.floor(fy + r)
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64) - fx
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64) - fy
    patch = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2.0 * kernel.sigma**2))
    return patch / patch.sum(), x_lo, y_lo


def render_density(
    points: Sequence[tuple[float, float]],
    width: int,
    height: int,
    kernel: KernelSpec = KernelSpec(),
) -> DensityMap:
    """Sum of one renormalized Gaussian per head position."""
    if width < 1 or height < 1:
        raise ValueError(f"raster dimensions must be positive, got {width}x{height}")
    values = np.zeros((height, width), dtype=np.float64)
    for x, y in points:
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"point ({x}, {y}) outside {width}x{height} raster")
        patch, x_lo, y_lo = _kernel_patch(float(x), float(y), kernel)
        ph, pw = patch.shape
        x0, y0 = max(x_lo, 0), max(y_lo, 0)
        x1, y1 = min(x_lo + pw, width), min(y_lo + ph, height)
        values[y0:y1, x0:x1] += patch[y0 - y_lo : y1 - y_lo, x0 - x_lo : x1 - x_lo]
    return DensityMap(values=values)


def kernel_peak(kernel: KernelSpec = KernelSpec()) -> float:
    """Center value of one integer-centered renormalized kernel."""
    patch, _, _ = _kernel_patch(0.0, 0.0, kernel)
    return float(patch.max())


def default_tau(kernel: KernelSpec = KernelSpec(), fraction: float = 0.25) -> float:
    """Blob threshold as a fraction of the single-head peak (relative, not
    absolute, so it tracks the kernel width)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    return fraction * kernel_peak(kernel)


# ---------------------------------------------------------------------------
# Thresholding and counting
# ---------------------------------------------------------------------------

def threshold_map(density: DensityMap, tau: float) -> np.ndarray:
    """Boolean crowd-blob mask: strictly above tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return density.values > tau


def count_blobs(mask: np.ndarray) -> int:
    """Number of 8-connected components of true pixels."""
    mask = np.asarray(mask, dtype=bool)
    _, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    return int(count)


def estimate_count(density: DensityMap, tau: float) -> int:
    """Blob count of the thresholded map: the crowd-count estimate."""
    return count_blobs(threshold_map(density, tau))


# ---------------------------------------------------------------------------
# Similarity and fusion
# ---------------------------------------------------------------------------

def similarity(a: DensityMap, b: DensityMap) -> float:
    """Pearson correlation over all pixels.

    Degenerate cases: two equal constant maps correlate perfectly (1.0); if
    at least one map is constant and they are not equal there is no
    correlation evidence, score 0.0.
    """
    if a.values.shape != b.values.shape:
        raise ValueError(f"dimension mismatch: {a.values.shape} vs {b.values.shape}")
    av = a.values.astype(np.float64).ravel()
    bv = b.values.astype(np.float64).ravel()
    da = av - av.mean()
    db = bv - bv.mean()
    na = float(np.sqrt((da * da).sum()))
    nb = float(np.sqrt((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        return 1.0 if np.array_equal(av, bv) else 0.0
    return float((da * db).sum() / (na * nb))


def fuse_maps(maps: Sequence[DensityMap], config: FusionConfig = FusionConfig()) -> DensityMap:
    """Average the realizations that agree with the consensus anchor.

    The anchor is the map with the highest mean similarity to the rest (ties
    break to the lowest index); every map whose similarity to the anchor
    reaches accept_gamma joins the pixelwise mean.  The anchor itself always
    qualifies (self-similarity is 1).
    """
    if len(maps) == 0:
        raise ValueError("fuse_maps requires at least one map")
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise ValueError(f"dimension mismatch: {m.values.shape} vs {shape}")
    if len(maps) == 1:
        return maps[0]

    n = len(maps)
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = similarity(maps[i], maps[j])
    mean_to_others = (sim.sum(axis=1) - 1.0) / (n - 1)
    anchor = int(np.argmax(mean_to_others))  # argmax takes the first (lowest) index on ties

    accepted = [maps[i].values for i in range(n) if sim[anchor, i] >= config.accept_gamma]
    if all(np.array_equal(v, accepted[0]) for v in accepted[1:]):
        # mean of identical maps is the map itself, bit-exactly
        return DensityMap(values=accepted[0])
    fused = np.mean(accepted, axis=0, dtype=np.float64)
    return DensityMap(values=fused)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def encode_dmp(density: DensityMap) -> bytes:
    """16-byte header (magic, width, height, pad) + float32 LE raster."""
    header = _DMP_MAGIC + struct.pack("<II4x", density.width, density.height)
    return header + density.values.astype("<f4").tobytes()


def decode_dmp(data: bytes) -> DensityMap:
    if data[:4] != _DMP_MAGIC:
        raise ValueError("not a DMP1 container: bad magic")
    if len(data) < 16:
        raise ValueError("truncated DMP1 header")
    width, height = struct.unpack_from("<II", data, 4)
    expected = 16 + width * height * 4
    if len(data) < expected:
        raise ValueError(f"truncated DMP1 payload: expected {expected} bytes, got {len(data)}")
    raster = np.frombuffer(data, dtype="<f4", count=width * height, offset=16)
    return DensityMap(values=raster.reshape(height, width).astype(np.float64))


def write_dmp(path: str | Path, density: DensityMap) -> None:
    atomic_write_bytes(path, encode_dmp(density))


def read_dmp(path: str | Path) -> DensityMap:
    return decode_dmp(Path(path).read_bytes())


def density_to_pgm(density: DensityMap) -> bytes:
    """PGM visualization scaled so the map peak maps to white."""
    peak = density.values.max()
    scaled = density.values / peak if peak > 0 else density.values
    return encode_pgm(scaled)


def write_density_pgm(path: str | Path, density: DensityMap) -> None:
    atomic_write_bytes(path, density_to_pgm(density))


# ---------------------------------------------------------------------------
# Head annotations ("x,y" per line)
# ---------------------------------------------------------------------------

def parse_annotations(text: str) -> list[tuple[float, float]]:
    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"annotation line {lineno}: expected 'x,y', got {line!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ValueError(f"annotation line {lineno}: non-numeric coordinate in {line!r}") from None
    return points


def format_annotations(points: Sequence[tuple[float, float]]) -> str:
    return "".join(f"{x:g},{y:g}\n" for x, y in points)


def read_annotations(path: str | Path) -> list[tuple[float, float]]:
    return parse_annotations(Path(path).read_text(encoding="utf-8"))


def write_annotations(path: str | Path, points: Sequence[tuple[float, float]]) -> None:
    atomic_write_text(path, format_annotations(points))
