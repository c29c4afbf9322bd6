"""Deterministic synthetic crowd videos: frames, head annotations, event labels.

People are bright Gaussian dots over a static value-noise backdrop.  Outside
event bursts each person jitters at base_speed with its heading biased back
toward a home position, so quiet stretches stay put instead of drifting off
camera.  During a burst every person dashes along a per-person direction at
base_speed * multiplier, and the burst windows double as ground-truth event
labels.  Everything is a pure function of the SynthSpec, so identical specs
yield bitwise-identical corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .density import format_annotations
from .frameio import atomic_write_text, frame_filename, resize_bilinear, write_pgm
from .metrics import EventLabels, format_labels

# Scene constants: a dim textured backdrop with bright person dots on top.
# The texture gives the flow estimator gradients to hold on to; its amplitude
# stays low so the dots dominate the motion signal.
_BACKGROUND_BASE = 0.25
_BACKGROUND_AMPLITUDE = 0.1
_NOISE_CELL = 16      # value-noise lattice pitch in pixels
_DOT_GAIN = 0.55      # dot peak intensity above the backdrop
_HOME_PULL = 0.8      # quiescent heading bias toward home, per pixel of offset

# Corpus burst placement: quiet lead-in/out and a guaranteed quiet gap between
# consecutive bursts so events never blur together.
_BURST_MARGIN = 50
_BURST_GAP = 40


@dataclass(frozen=True)
class SynthSpec:
    """One synthetic video: geometry, population, motion schedule, seed."""

    width: int = 256
    height: int = 256
    frames: int = 1177
    fps: float = 24.0
    n_people: int = 20
    base_speed: float = 0.05
    bursts: tuple[tuple[int, int, float], ...] = ()
    dot_sigma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster dimensions must be positive, got {self.width}x{self.height}")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.n_people < 0:
            raise ValueError("n_people must be >= 0")
        if self.base_speed < 0:
            raise ValueError("base_speed must be >= 0")
        if self.dot_sigma <= 0:
            raise ValueError("dot_sigma must be positive")
        object.__setattr__(
            self, "bursts", tuple((int(s), int(e), float(m)) for s, e, m in self.bursts)
        )
        previous_end = -1
        for start, end, multiplier in self.bursts:
            if not 0 <= start <= end < self.frames:
                raise ValueError(f"burst ({start}, {end}) outside [0, {self.frames})")
            if start <= previous_end:
                raise ValueError(f"burst ({start}, {end}) overlaps or is out of order")
            if multiplier <= 1.0:
                raise ValueError(f"speed_multiplier must be > 1, got {multiplier}")
            previous_end = end

    @property
    def labels(self) -> EventLabels:
        return EventLabels(windows=tuple((start, end) for start, end, _ in self.bursts))


def _value_noise(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Bilinear value noise in [0, 1] with roughly _NOISE_CELL-pixel features."""
    cells_x = max(2, -(-width // _NOISE_CELL) + 1)
    cells_y = max(2, -(-height // _NOISE_CELL) + 1)
    lattice = rng.random((cells_y, cells_x))
    return np.asarray(resize_bilinear(lattice, width, height), dtype=np.float64)


def _render(background: np.ndarray, points: np.ndarray, dot_sigma: float) -> np.ndarray:
    """Backdrop plus one truncated Gaussian dot per person, clipped to [0, 1]."""
    frame = background.copy()
    height, width = frame.shape
    radius = int(math.ceil(3.0 * dot_sigma))
    denom = 2.0 * dot_sigma * dot_sigma
    for x, y in points:
        x0 = max(int(math.ceil(x - radius)), 0)
        x1 = min(int(math.floor(x + radius)), width - 1)
        y0 = max(int(math.ceil(y - radius)), 0)
        y1 = min(int(math.floor(y + radius)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        gx = np.arange(x0, x1 + 1, dtype=np.float64) - x
        gy = np.arange(y0, y1 + 1, dtype=np.float64) - y
        frame[y0 : y1 + 1, x0 : x1 + 1] += _DOT_GAIN * np.exp(
            -(gy[:, None] ** 2 + gx[None, :] ** 2) / denom
        )
    np.clip(frame, 0.0, 1.0, out=frame)
    return frame


def _schedule(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame speed multiplier and burst index (-1 when quiescent)."""
    multiplier = np.ones(spec.frames, dtype=np.float64)
    burst_id = np.full(spec.frames, -1, dtype=np.int64)
    for i, (start, end, m) in enumerate(spec.bursts):
        multiplier[start : end + 1] = m
        burst_id[start : end + 1] = i
    return multiplier, burst_id


def _reflect(raw: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Fold positions back into the raster; report which components hit a wall."""
    folded = np.empty_like(raw)
    crossed = np.zeros(raw.shape, dtype=bool)
    for axis, hi in ((0, float(width - 1)), (1, float(height - 1))):
        v = raw[:, axis]
        out = (v < 0.0) | (v > hi)
        crossed[:, axis] = out
        if hi == 0.0:
            folded[:, axis] = 0.0
            continue
        # Fold only the components that left the raster; in-range ones are
        # copied bitwise so a static scene stays exactly static.
        m = np.mod(v, 2.0 * hi)
        folded[:, axis] = np.where(out, hi - np.abs(m - hi), v)
    return folded, crossed


def _simulate(spec: SynthSpec) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (frame, positions) per frame; positions is an (n_people, 2) x,y array."""
    rng = np.random.default_rng(spec.seed)
    background = _BACKGROUND_BASE + _BACKGROUND_AMPLITUDE * _value_noise(
        spec.width, spec.height, rng
    )

    n = spec.n_people
    margin_x = (spec.width - 1) / 6.0
    margin_y = (spec.height - 1) / 6.0
    pos = np.empty((n, 2), dtype=np.float64)
    pos[:, 0] = rng.uniform(margin_x, spec.width - 1 - margin_x, n)
    pos[:, 1] = rng.uniform(margin_y, spec.height - 1 - margin_y, n)
    home = pos.copy()

    angles = rng.uniform(0.0, 2.0 * math.pi, (len(spec.bursts), n))
    dash = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    jitter = rng.uniform(0.0, 2.0 * math.pi, (spec.frames, n))

    multiplier, burst_id = _schedule(spec)
    yield _render(background, pos, spec.dot_sigma), pos.copy()
    for t in range(1, spec.frames):
        b = int(burst_id[t])
        if b >= 0:
            heading = dash[b]
        else:
            drive = _HOME_PULL * (home - pos)
            drive[:, 0] += np.cos(jitter[t])
            drive[:, 1] += np.sin(jitter[t])
            norm = np.hypot(drive[:, 0], drive[:, 1])
            heading = drive / np.maximum(norm, 1e-12)[:, None]
        raw = pos + spec.base_speed * float(multiplier[t]) * heading
        pos, crossed = _reflect(raw, spec.width, spec.height)
        if b >= 0:
            dash[b][crossed] *= -1.0
            if t == spec.bursts[b][1]:
                home = pos.copy()  # the crowd settles wherever the event left it
        yield _render(background, pos, spec.dot_sigma), pos.copy()


def generate(
    spec: SynthSpec,
) -> tuple[list[np.ndarray], list[tuple[tuple[float, float], ...]], EventLabels]:
    """Materialize the whole video in memory; _simulate streams it instead."""
    frames: list[np.ndarray] = []
    annotations: list[tuple[tuple[float, float], ...]] = []
    for frame, points in _simulate(spec):
        frames.append(frame)
        annotations.append(tuple((float(x), float(y)) for x, y in points))
    return frames, annotations, spec.labels


def annotation_filename(index: int) -> str:
    return f"frame_{index:06d}.txt"


def write_video(spec: SynthSpec, video_dir: str | Path) -> Path:
    """Emit frames/, annotations/, labels.txt and manifest.txt under video_dir."""
    root = Path(video_dir)
    frames_dir = root / "frames"
    annotations_dir = root / "annotations"
    frames_dir.mkdir(parents=True, exist_ok=True)
    annotations_dir.mkdir(parents=True, exist_ok=True)
    for index, (frame, points) in enumerate(_simulate(spec)):
        write_pgm(frames_dir / frame_filename(index), frame)
        atomic_write_text(
            annotations_dir / annotation_filename(index),
            format_annotations([(float(x), float(y)) for x, y in points]),
        )
    atomic_write_text(frames_dir / "fps.txt", f"{spec.fps:g}\n")
    atomic_write_text(root / "labels.txt", format_labels(spec.labels))
    manifest = (
        "frames = frames\n"
        "annotations = annotations\n"
        "labels = labels.txt\n"
        f"frame_count = {spec.frames}\n"
        f"fps = {spec.fps:g}\n"
    )
    atomic_write_text(root / "manifest.txt", manifest)
    return root


@dataclass(frozen=True)
class CorpusSpec:
    """Family of videos sharing one scene recipe; bursts are placed per video.

    burst_frames fixes the total fast frames per video at just over a sixth of
    the defaults' frame budget, which keeps the quiescent and burst motion
    regimes separable by a high percentile of the frame-to-frame magnitudes.
    """

    videos: int = 6
    width: int = 256
    height: int = 256
    frames: int = 1177
    fps: float = 24.0
    n_people: int = 20
    base_speed: float = 0.05
    speed_multiplier: float = 30.0
    dot_sigma: float = 2.0
    burst_frames: int = 194
    min_bursts: int = 3
    max_bursts: int = 8
    seed: int = 7

    def __post_init__(self):
        if self.videos < 1:
            raise ValueError("videos must be >= 1")
        if not 1 <= self.min_bursts <= self.max_bursts:
            raise ValueError("need 1 <= min_bursts <= max_bursts")
        if self.burst_frames < self.max_bursts:
            raise ValueError("burst_frames must allow at least one frame per burst")
        if self.speed_multiplier <= 1.0:
            raise ValueError("speed_multiplier must be > 1")
        # Geometry and population ranges are validated by the per-video SynthSpec.


def video_specs(corpus: CorpusSpec = CorpusSpec()) -> tuple[SynthSpec, ...]:
    """One SynthSpec per video; burst counts sweep min..max, placement is seeded."""
    rng = np.random.default_rng(corpus.seed)
    span = corpus.max_bursts - corpus.min_bursts + 1
    specs: list[SynthSpec] = []
    for v in range(corpus.videos):
        count = corpus.min_bursts + v % span
        seed = int(rng.integers(0, 2**31 - 1))
        base, extra = divmod(corpus.burst_frames, count)
        lengths = [base + (1 if i < extra else 0) for i in range(count)]
        slot = (corpus.frames - 2 * _BURST_MARGIN) // count
        bursts: list[tuple[int, int, float]] = []
        for i, length in enumerate(lengths):
            slack = slot - length - _BURST_GAP
            if slack < 0:
                raise ValueError(
                    f"cannot place {count} bursts of ~{length} frames in {corpus.frames} frames"
                )
            start = _BURST_MARGIN + i * slot + int(rng.integers(0, slack + 1))
            bursts.append((start, start + length - 1, corpus.speed_multiplier))
        specs.append(
            SynthSpec(
                width=corpus.width,
                height=corpus.height,
                frames=corpus.frames,
                fps=corpus.fps,
                n_people=corpus.n_people,
                base_speed=corpus.base_speed,
                bursts=tuple(bursts),
                dot_sigma=corpus.dot_sigma,
                seed=seed,
            )
        )
    return tuple(specs)


def video_dirname(index: int) -> str:
    return f"video_{index:03d}"


def write_corpus(corpus: CorpusSpec, out_dir: str | Path) -> list[Path]:
    """Write every video plus a top-level videos.txt listing their directories."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    dirs = [
        write_video(spec, root / video_dirname(index))
        for index, spec in enumerate(video_specs(corpus))
    ]
    atomic_write_text(root / "videos.txt", "".join(d.name + "\n" for d in dirs))
    return dirs
