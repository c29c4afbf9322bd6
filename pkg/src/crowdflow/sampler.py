"""Frame-selection strategies: motion-gated event sampling plus five baselines.

The event sampler keeps a reference frame and saves the current frame whenever
the mean optical-flow magnitude against that reference reaches the threshold.
By default the reference advances only on saves (anchored); a frame-to-frame
mode is available for workloads with long continuous motion, and is what the
adaptive baseline uses internally.

Baselines (uniform, random, stratified, keyframe, adaptive) are deliberately
plain so comparisons against event sampling stay honest.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .frameio import atomic_write_text, frame_filename
from .optflow import (
    ExpansionPyramid,
    FlowParams,
    expansion_pyramid,
    flow_between,
    mean_motion,
)

_SIGMA_FLOOR = 1e-6  # keeps the adaptive band open when recent motion is constant

_STRATEGIES = ("event", "uniform", "random", "stratified", "keyframe", "adaptive")


@dataclass(frozen=True)
class SamplerConfig:
    """Strategy selection plus the union of per-strategy parameters."""

    strategy: str = "event"
    motion_threshold: float = 0.5
    min_gap: int = 0
    reference_mode: str = "anchored"  # or "frame-to-frame"
    stride: int = 30                  # uniform
    count: int = 10                   # random / keyframe
    seed: int = 0                     # random
    segments: int = 15                # stratified
    per_segment: int = 1              # stratified
    window: int = 30                  # adaptive
    sensitivity: float = 1.0          # adaptive

    def __post_init__(self):
        if self.strategy not in _STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {_STRATEGIES}")
        if self.motion_threshold < 0:
            raise ValueError("motion_threshold must be >= 0")
        if self.min_gap < 0:
            raise ValueError("min_gap must be >= 0")
        if self.reference_mode not in ("anchored", "frame-to-frame"):
            raise ValueError(f"unknown reference_mode {self.reference_mode!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.per_segment < 1:
            raise ValueError("per_segment must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be positive")


@dataclass(frozen=True)
class SamplingRun:
    """Outcome of one strategy over one stream.

    per_frame_magnitude holds the mean flow magnitude for every evaluated
    frame (NaN at index 0, which is never evaluated); it is None for
    strategies that do not compute flow.
    """

    total_frames: int
    saved_indices: tuple[int, ...]
    per_frame_magnitude: np.ndarray | None = None

    def __post_init__(self):
        idx = self.saved_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("saved_indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.total_frames):
            raise ValueError("saved_indices out of range")
        if self.per_frame_magnitude is not None and len(self.per_frame_magnitude) != self.total_frames:
            raise ValueError("per_frame_magnitude length must equal total_frames")

    @property
    def saved_count(self) -> int:
        return len(self.saved_indices)


# ---------------------------------------------------------------------------
# Event-driven sampling
# ---------------------------------------------------------------------------

def event_sample(
    source: Iterable[np.ndarray],
    config: SamplerConfig,
    flow_params: FlowParams = FlowParams(),
) -> SamplingRun:
    """Save frames whose mean motion against the reference reaches the threshold.

    Frame 0 is always saved and seeds the reference.  In anchored mode the
    reference advances only on saves, so magnitudes accumulate between events;
    in frame-to-frame mode it advances every frame.
    """
    frames = iter(source)
    try:
        first = next(frames)
    except StopIteration:
        raise ValueError("event_sample requires at least one frame") from None

    anchored = config.reference_mode == "anchored"
    reference: ExpansionPyramid = expansion_pyramid(first, flow_params)
    saved = [0]
    magnitudes = [math.nan]
    last_saved = 0
    for index, frame in enumerate(frames, start=1):
        current = expansion_pyramid(frame, flow_params)
        stats = mean_motion(flow_between(reference, current, flow_params))
        magnitudes.append(stats.mean_magnitude)
        if stats.mean_magnitude >= config.motion_threshold and index - last_saved >= config.min_gap:
            saved.append(index)
            last_saved = index
            if anchored:
                reference = current
        if not anchored:
            reference = current
    return SamplingRun(
        total_frames=len(magnitudes),
        saved_indices=tuple(saved),
        per_frame_magnitude=np.array(magnitudes, dtype=np.float64),
    )


def calibrate_threshold(
    source: Iterable[np.ndarray],
    flow_params: FlowParams = FlowParams(),
    percentile: float = 85.0,
) -> float:
    """Nearest-rank percentile of the frame-to-frame mean motion magnitudes."""
    if not 0.0 < percentile <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {percentile}")
    magnitudes = frame_to_frame_magnitudes(source, flow_params)
    if magnitudes.size == 0:
        raise ValueError("calibrate_threshold requires at least two frames")
    ordered = np.sort(magnitudes)
    rank = math.ceil(percentile / 100.0 * ordered.size)  # 1-based nearest rank
    return float(ordered[rank - 1])


def frame_to_frame_magnitudes(
    source: Iterable[np.ndarray], flow_params: FlowParams = FlowParams()
) -> np.ndarray:
    """Mean flow magnitude of every consecutive frame pair (length n-1)."""
    out: list[float] = []
    previous: ExpansionPyramid | None = None
    for frame in source:
        current = expansion_pyramid(frame, flow_params)
        if previous is not None:
            out.append(mean_motion(flow_between(previous, current, flow_params)).mean_magnitude)
        previous = current
    return np.array(out, dtype=np.float64)


# ---------------------------------------------------------------------------
# Offline baselines (pure index arithmetic)
# ---------------------------------------------------------------------------

def uniform_sample(total: int, stride: int) -> SamplingRun:
    """Every stride-th frame starting at 0."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return SamplingRun(total_frames=total, saved_indices=tuple(range(0, total, stride)))


def random_sample(total: int, k: int, seed: int) -> SamplingRun:
    """k distinct indices from a seeded generator, sorted."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0 <= k <= total:
        raise ValueError(f"k must be in [0, {total}], got {k}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=k, replace=False)
    return SamplingRun(total_frames=total, saved_indices=tuple(sorted(int(i) for i in picks)))


def stratified_sample(total: int, segments: int, per_segment: int = 1) -> SamplingRun:
    """Equal contiguous segments, each contributing evenly spaced indices."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if segments < 1:
        raise ValueError("segments must be >= 1")
    if segments > total:
        raise ValueError(f"segments ({segments}) cannot exceed total ({total})")
    if per_segment < 1:
        raise ValueError("per_segment must be >= 1")
    picks: set[int] = set()
    for s in range(segments):
        start = s * total // segments
        end = (s + 1) * total // segments
        length = end - start
        for j in range(per_segment):
            picks.add(start + j * length // per_segment)
    return SamplingRun(total_frames=total, saved_indices=tuple(sorted(picks)))


# ---------------------------------------------------------------------------
# Content-driven baselines
# ---------------------------------------------------------------------------

def keyframe_sample(source: Iterable[np.ndarray], k: int) -> SamplingRun:
    """k best local maxima of the mean-absolute-difference score.

    Frame scores are the mean |difference| from the predecessor (frame 0
    scores 0).  Plateaus count as maxima, ties resolve to the lower index,
    and if the stream has fewer maxima than k, the highest-scoring remaining
    frames fill the deficit.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: list[float] = []
    previous: np.ndarray | None = None
    for frame in source:
        frame = np.asarray(frame, dtype=np.float64)
        scores.append(0.0 if previous is None else float(np.abs(frame - previous).mean()))
        previous = frame
    if not scores:
        raise ValueError("keyframe_sample requires at least one frame")

    total = len(scores)
    is_max = [
        (i == 0 or scores[i] >= scores[i - 1]) and (i == total - 1 or scores[i] >= scores[i + 1])
        for i in range(total)
    ]
    by_score = sorted(range(total), key=lambda i: (-scores[i], i))
    ranked = [i for i in by_score if is_max[i]] + [i for i in by_score if not is_max[i]]
    return SamplingRun(total_frames=total, saved_indices=tuple(sorted(ranked[: min(k, total)])))


def adaptive_from_magnitudes(
    magnitudes: Iterable[float],
    window: int = 30,
    sensitivity: float = 1.0,
    min_gap: int = 0,
) -> SamplingRun:
    """Band rule over a precomputed frame-to-frame magnitude series.

    magnitudes[t] is the motion of frame t+1 against frame t, so a series of
    length n-1 describes an n-frame stream.  Frame t+1 is saved when its
    magnitude strictly exceeds mean + sensitivity * (stddev + floor) of the
    previous `window` magnitudes; the first `window` entries are warm-up.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    series = [float(m) for m in magnitudes]
    saved = [0]
    last_saved = 0
    for t, m in enumerate(series):
        index = t + 1
        if t >= window:
            recent = series[t - window : t]
            band = float(np.mean(recent)) + sensitivity * (float(np.std(recent)) + _SIGMA_FLOOR)
            if m > band and index - last_saved >= min_gap:
                saved.append(index)
                last_saved = index
    return SamplingRun(
        total_frames=len(series) + 1,
        saved_indices=tuple(saved),
        per_frame_magnitude=np.array([math.nan] + series, dtype=np.float64),
    )


def adaptive_sample(
    source: Iterable[np.ndarray],
    window: int = 30,
    sensitivity: float = 1.0,
    flow_params: FlowParams = FlowParams(),
    min_gap: int = 0,
) -> SamplingRun:
    """Frame-to-frame motion gated by a running mean + sensitivity * stddev band.

    The band at frame t comes from the previous `window` magnitudes (exclusive
    of t), so the first `window` evaluated frames are warm-up and never saved.
    A small stddev floor keeps the band well-defined on constant motion.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if sensitivity <= 0:
        raise ValueError("sensitivity must be positive")
    frames = iter(source)
    try:
        first = next(frames)
    except StopIteration:
        raise ValueError("adaptive_sample requires at least one frame") from None

    previous = expansion_pyramid(first, flow_params)
    series: list[float] = []
    for frame in frames:
        current = expansion_pyramid(frame, flow_params)
        series.append(mean_motion(flow_between(previous, current, flow_params)).mean_magnitude)
        previous = current
    return adaptive_from_magnitudes(series, window, sensitivity, min_gap)


# ---------------------------------------------------------------------------
# Dispatch + serialization
# ---------------------------------------------------------------------------

def run_sampler(
    source: Iterable[np.ndarray],
    config: SamplerConfig,
    flow_params: FlowParams = FlowParams(),
    total: int | None = None,
) -> SamplingRun:
    """Run the configured strategy over a frame stream.

    Offline strategies need only the frame count; pass `total` to avoid
    consuming the stream just to count it.
    """
    if config.strategy == "event":
        return event_sample(source, config, flow_params)
    if config.strategy == "keyframe":
        return keyframe_sample(source, config.count)
    if config.strategy == "adaptive":
        return adaptive_sample(source, config.window, config.sensitivity, flow_params, config.min_gap)
    if total is None:
        total = sum(1 for _ in source)
    if config.strategy == "uniform":
        return uniform_sample(total, config.stride)
    if config.strategy == "random":
        return random_sample(total, config.count, config.seed)
    return stratified_sample(total, config.segments, config.per_segment)


def run_to_csv(run: SamplingRun) -> str:
    """Rows frame_index, mean_magnitude, saved(0/1); magnitude blank if unknown."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame_index", "mean_magnitude", "saved"])
    saved = set(run.saved_indices)
    for i in range(run.total_frames):
        if run.per_frame_magnitude is None:
            mag = ""
        else:
            value = run.per_frame_magnitude[i]
            mag = "nan" if math.isnan(value) else repr(float(value))
        writer.writerow([i, mag, int(i in saved)])
    return buf.getvalue()


def run_from_csv(text: str) -> SamplingRun:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["frame_index", "mean_magnitude", "saved"]:
        raise ValueError(f"unexpected sampling-run CSV header: {header}")
    saved: list[int] = []
    magnitudes: list[float] = []
    has_magnitudes = False
    for row in reader:
        index, mag, flag = row
        if mag != "":
            has_magnitudes = True
        magnitudes.append(float(mag) if mag != "" else math.nan)
        if flag == "1":
            saved.append(int(index))
    return SamplingRun(
        total_frames=len(magnitudes),
        saved_indices=tuple(saved),
        per_frame_magnitude=np.array(magnitudes) if has_magnitudes else None,
    )


def write_manifest(path: str | Path, run: SamplingRun) -> None:
    """Saved-frame filenames, one per line."""
    lines = "".join(frame_filename(i) + "\n" for i in run.saved_indices)
    atomic_write_text(path, lines)


def read_manifest(path: str | Path) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
