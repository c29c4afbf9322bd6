"""Sampling-quality metrics: event matching, precision/recall/F1, reduction
ratio, correct-frame rate, count MAE, and sampled-vs-skipped motion means.

Division-by-zero never raises here; undefined quantities come back as zero
with the affected metric named in an `undefined` flag set, so batch
evaluation over many videos stays total.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sampler import SamplingRun


@dataclass(frozen=True)
class EventLabels:
    """Ground-truth event windows as inclusive (start, end) frame ranges."""

    windows: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple((int(s), int(e)) for s, e in self.windows))
        for start, end in self.windows:
            if start > end:
                raise ValueError(f"window ({start}, {end}) has start > end")
        for (_, prev_end), (start, _) in zip(self.windows, self.windows[1:]):
            if start <= prev_end:
                raise ValueError("windows must be sorted and non-overlapping")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    undefined: frozenset[str] = frozenset()


@dataclass(frozen=True)
class MetricsReport:
    total_frames: int
    saved: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    reduction_ratio: float
    correct_frame_rate: float
    mean_magnitude_sampled: float
    mean_magnitude_skipped: float
    undefined: frozenset[str] = frozenset()


# ---------------------------------------------------------------------------
# Event matching
# ---------------------------------------------------------------------------

def match_events(run: SamplingRun, labels: EventLabels, slack: int = 3) -> tuple[int, int, int]:
    """Count TP/FP/FN between saved frames and event windows expanded by ±slack.

    Each window yields at most one TP, taken by the first saved frame inside
    it; later saves inside an already-matched window are duplicates of a
    caught event and count as neither TP nor FP.  Saves outside every
    expanded window are FP; windows nobody hit are FN.
    """
    if slack < 0:
        raise ValueError("slack must be >= 0")
    expanded = [(s - slack, e + slack) for s, e in labels.windows]
    matched = [False] * len(expanded)
    tp = fp = 0
    for index in run.saved_indices:
        containing = [w for w, (s, e) in enumerate(expanded) if s <= index <= e]
        if not containing:
            fp += 1
            continue
        unmatched = [w for w in containing if not matched[w]]
        if unmatched:
            matched[unmatched[0]] = True
            tp += 1
        # else: duplicate save inside an already-caught window, neutral
    fn = matched.count(False)
    return tp, fp, fn


def precision_recall_f1(tp: int, fp: int, fn: int) -> PRF:
    """Precision, recall, and the F1 computed from the 3-decimal roundings.

    F1 uses precision/recall rounded to 3 decimals, matching how published
    sampling tables are assembled from already-rounded columns; the exact
    harmonic mean can differ in the third decimal.
    """
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    undefined = set()
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.add("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.add("recall")
    p3, r3 = round(precision, 3), round(recall, 3)
    if p3 + r3 > 0:
        f1 = 2.0 * p3 * r3 / (p3 + r3)
    else:
        f1 = 0.0
        undefined.add("f1")
    return PRF(precision=precision, recall=recall, f1=f1, undefined=frozenset(undefined))


# ---------------------------------------------------------------------------
# Ratios
# ---------------------------------------------------------------------------

def reduction_ratio(saved: int, total: int) -> float:
    """Fraction of frames NOT kept: 1 - saved/total."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0 <= saved <= total:
        raise ValueError(f"saved must be in [0, {total}], got {saved}")
    return 1.0 - saved / total


def correct_frame_rate(correct: int, saved: int) -> tuple[float, bool]:
    """correct/saved and a flag that is True when saved = 0 (rate undefined)."""
    if correct < 0 or saved < 0:
        raise ValueError("counts must be non-negative")
    if correct > saved:
        raise ValueError(f"correct ({correct}) cannot exceed saved ({saved})")
    if saved == 0:
        return 0.0, True
    return correct / saved, False


def mae(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean absolute error between paired count lists."""
    if len(predicted) != len(actual):
        raise ValueError(f"length mismatch: {len(predicted)} vs {len(actual)}")
    if len(predicted) == 0:
        raise ValueError("mae requires at least one pair")
    p = np.asarray(predicted, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    return float(np.abs(p - a).mean())


def magnitude_split(run: SamplingRun) -> tuple[float, float, frozenset[str]]:
    """Mean motion magnitude over saved vs skipped evaluated frames.

    Frame 0 is never evaluated (NaN magnitude) and joins neither side.  An
    empty side is reported as 0 with its name in the undefined set.
    """
    if run.per_frame_magnitude is None:
        raise ValueError("run has no per-frame magnitudes")
    magnitudes = run.per_frame_magnitude
    evaluated = ~np.isnan(magnitudes)
    saved_mask = np.zeros(run.total_frames, dtype=bool)
    saved_mask[list(run.saved_indices)] = True

    undefined = set()
    sampled = magnitudes[evaluated & saved_mask]
    skipped = magnitudes[evaluated & ~saved_mask]
    if sampled.size:
        sampled_mean = float(sampled.mean())
    else:
        sampled_mean = 0.0
        undefined.add("mean_magnitude_sampled")
    if skipped.size:
        skipped_mean = float(skipped.mean())
    else:
        skipped_mean = 0.0
        undefined.add("mean_magnitude_skipped")
    return sampled_mean, skipped_mean, frozenset(undefined)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

def evaluate_run(run: SamplingRun, labels: EventLabels, slack: int = 3) -> MetricsReport:
    """Full per-video report for a flow-driven sampling run.

    "Correct" frames are all saves inside some expanded window (TPs plus
    neutral duplicates), i.e. saved minus FP.
    """
    tp, fp, fn = match_events(run, labels, slack)
    prf = precision_recall_f1(tp, fp, fn)
    rate, rate_undefined = correct_frame_rate(run.saved_count - fp, run.saved_count)
    if run.per_frame_magnitude is None:
        # offline strategies never measure motion; keep batch evaluation total
        sampled_mean, skipped_mean = 0.0, 0.0
        split_undefined = frozenset({"mean_magnitude_sampled", "mean_magnitude_skipped"})
    else:
        sampled_mean, skipped_mean, split_undefined = magnitude_split(run)
    undefined = set(prf.undefined) | split_undefined
    if rate_undefined:
        undefined.add("correct_frame_rate")
    return MetricsReport(
        total_frames=run.total_frames,
        saved=run.saved_count,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=prf.precision,
        recall=prf.recall,
        f1=prf.f1,
        reduction_ratio=reduction_ratio(run.saved_count, run.total_frames),
        correct_frame_rate=rate,
        mean_magnitude_sampled=sampled_mean,
        mean_magnitude_skipped=skipped_mean,
        undefined=frozenset(undefined),
    )


_CSV_COLUMNS = [
    "video", "total_frames", "saved", "tp", "fp", "fn",
    "precision", "recall", "f1", "reduction_ratio",
    "correct_frame_rate_pct", "mean_magnitude_sampled", "mean_magnitude_skipped",
]


def report_csv(reports: Sequence[tuple[str, MetricsReport]]) -> str:
    """One row per video; ratios at 4 decimals, percentages at 1 decimal."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for name, r in reports:
        writer.writerow([
            name, r.total_frames, r.saved, r.tp, r.fp, r.fn,
            f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}",
            f"{r.reduction_ratio:.4f}",
            f"{100.0 * r.correct_frame_rate:.1f}",
            f"{r.mean_magnitude_sampled:.4f}", f"{r.mean_magnitude_skipped:.4f}",
        ])
    return buf.getvalue()


def report_table(reports: Sequence[tuple[str, MetricsReport]]) -> str:
    """Aligned text table; P/R/F1 at 3 decimals as in published tables."""
    header = ["Video", "Total", "Saved", "TP", "FP", "FN",
              "Precision", "Recall", "F1", "Reduction", "Correct%"]
    rows = [header]
    for name, r in reports:
        rows.append([
            name, str(r.total_frames), str(r.saved), str(r.tp), str(r.fp), str(r.fn),
            f"{r.precision:.3f}", f"{r.recall:.3f}", f"{r.f1:.3f}",
            f"{r.reduction_ratio:.4f}", f"{100.0 * r.correct_frame_rate:.1f}",
        ])
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Event-label serialization ("start,end" per line)
# ---------------------------------------------------------------------------

def parse_labels(text: str) -> EventLabels:
    windows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"label line {lineno}: expected 'start,end', got {line!r}")
        try:
            windows.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ValueError(f"label line {lineno}: non-integer frame in {line!r}") from None
    return EventLabels(windows=tuple(windows))


def format_labels(labels: EventLabels) -> str:
    return "".join(f"{s},{e}\n" for s, e in labels.windows)
