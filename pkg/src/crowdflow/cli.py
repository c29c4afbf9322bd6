"""Command-line front end: synth, sample, density, count, eval, pipeline.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal failure.
Every artifact lands via temp-file-then-rename, so concurrent runs never
expose partial outputs.  Multi-video commands honor --workers; within one
video the sampler is inherently sequential.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .config import PipelineConfig, read_config
from .density import (
    DensityMap,
    default_tau,
    estimate_count,
    fuse_maps,
    read_annotations,
    read_dmp,
    render_density,
    write_dmp,
)
from .frameio import (
    FrameSource,
    atomic_write_bytes,
    atomic_write_text,
    decode_y4m_stream,
    edge_overlay,
    frame_filename,
    iter_frame_dir,
    open_frame_dir,
    read_pgm,
    resize_bilinear,
    write_pgm,
)
from .metrics import (
    MetricsReport,
    correct_frame_rate,
    evaluate_run,
    mae,
    parse_labels,
    precision_recall_f1,
    reduction_ratio,
    report_csv,
    report_table,
)
from .sampler import SamplingRun, run_from_csv, run_sampler, run_to_csv, write_manifest
from .synth import CorpusSpec, video_dirname, video_specs, write_video


def density_overlay(frame: np.ndarray, density: DensityMap) -> np.ndarray:
    """Frame brightened by the max-normalized density at fixed 0.5 alpha.

    An all-zero map leaves the frame untouched, so empty scenes round-trip
    exactly.
    """
    peak = float(density.values.max())
    if peak == 0.0:
        return np.array(frame, dtype=np.float64, copy=True)
    blended = np.asarray(frame, dtype=np.float64) + 0.5 * (density.values / peak)
    return np.clip(blended, 0.0, 1.0)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; route them to the validation code."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        return read_config(args.config)
    return PipelineConfig()


def _out_dir(args: argparse.Namespace, config: PipelineConfig) -> Path:
    out = Path(args.output) if getattr(args, "output", None) else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _frame_streamer(
    input_path: str | Path,
) -> tuple[FrameSource, Callable[[], Iterator[np.ndarray]], int | None]:
    """Describe a video input and return a factory of fresh frame iterators."""
    path = Path(input_path)
    if path.is_dir():
        source = open_frame_dir(path)
        return source, lambda: iter_frame_dir(path), source.frame_count
    if path.suffix.lower() == ".y4m":
        with path.open("rb") as handle:
            source, _ = decode_y4m_stream(handle)

        def frames() -> Iterator[np.ndarray]:
            with path.open("rb") as handle:
                _, it = decode_y4m_stream(handle)
                yield from it

        return source, frames, None
    raise FileNotFoundError(f"input is neither a frame directory nor a .y4m file: {path}")


def _require_dir(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {p}")
    return p


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _parse_corpus_spec(text: str) -> CorpusSpec:
    """Flat key = value lines naming CorpusSpec fields."""
    kinds = {f.name: f.type for f in dataclasses.fields(CorpusSpec)}
    kwargs: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"spec line {lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key not in kinds:
            raise ValueError(f"unknown spec field {key!r}")
        if key in kwargs:
            raise ValueError(f"spec line {lineno}: duplicate field {key!r}")
        try:
            kwargs[key] = float(value) if kinds[key] == "float" else int(value)
        except ValueError:
            raise ValueError(f"spec field {key!r}: cannot parse {value!r}") from None
    return CorpusSpec(**kwargs)  # type: ignore[arg-type]


def cmd_synth(args: argparse.Namespace) -> int:
    corpus = _parse_corpus_spec(Path(args.spec).read_text(encoding="utf-8")) if args.spec else CorpusSpec()
    if args.seed is not None:
        corpus = dataclasses.replace(corpus, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    specs = video_specs(corpus)
    names = [video_dirname(i) for i in range(len(specs))]
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        list(pool.map(lambda pair: write_video(pair[0], out / pair[1]), zip(specs, names)))
    atomic_write_text(out / "videos.txt", "".join(name + "\n" for name in names))
    for name, spec in zip(names, specs):
        print(f"{name}: {spec.frames} frames, {len(spec.bursts)} bursts")
    print(f"corpus written to {out}")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def cmd_sample(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.seed is not None:
        config = dataclasses.replace(config, sampler=dataclasses.replace(config.sampler, seed=args.seed))
    input_path = args.input or config.input
    if not input_path:
        raise ValueError("no input: pass --input or set it in the config")
    _, frames, total = _frame_streamer(input_path)
    run = run_sampler(frames(), config.sampler, config.flow, total=total)

    out = _out_dir(args, config)
    atomic_write_text(out / "magnitudes.csv", run_to_csv(run))
    write_manifest(out / "manifest.txt", run)
    saved_dir = out / "saved"
    saved_dir.mkdir(exist_ok=True)
    wanted = set(run.saved_indices)
    in_dir = Path(input_path) if Path(input_path).is_dir() else None
    for index, frame in enumerate(frames()):
        if index not in wanted:
            continue
        if in_dir is not None:  # keep source bytes bit-exact
            atomic_write_bytes(saved_dir / frame_filename(index), (in_dir / frame_filename(index)).read_bytes())
        else:
            write_pgm(saved_dir / frame_filename(index), frame)
    print(f"saved {run.saved_count} of {run.total_frames} frames -> {out}")
    return 0


# ---------------------------------------------------------------------------
# density / count
# ---------------------------------------------------------------------------

def _named_annotation_files(annotations_dir: Path) -> list[Path]:
    files = sorted(annotations_dir.glob("*.txt"))
    if not files:
        raise ValueError(f"no annotation files (*.txt) in {annotations_dir}")
    return files


def cmd_density(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    if args.realizations:
        realizations_dir = _require_dir(args.realizations, "realizations")
        files = sorted(realizations_dir.glob("*.dmp"))
        if not files:
            raise ValueError(f"no density realizations (*.dmp) in {realizations_dir}")
        fused = fuse_maps([read_dmp(p) for p in files], config.fusion)
        write_dmp(out / "fused.dmp", fused)
        print(f"fused {len(files)} realizations -> {out / 'fused.dmp'}")
        return 0
    if not args.annotations:
        raise ValueError("missing inputs: provide --annotations (with --frames) or --realizations")
    if not args.frames:
        raise ValueError("missing --frames: overlays need the source frames")
    annotations_dir = _require_dir(args.annotations, "annotations")
    frames_dir = _require_dir(args.frames, "frames")
    annotation_files = _named_annotation_files(annotations_dir)
    for ann_path in annotation_files:
        frame_path = frames_dir / (ann_path.stem + ".pgm")
        if not frame_path.exists():
            raise FileNotFoundError(f"no frame matching annotations {ann_path.name}: {frame_path}")
        frame = read_pgm(frame_path)
        points = read_annotations(ann_path)
        density = render_density(points, frame.shape[1], frame.shape[0], config.kernel)
        write_dmp(out / (ann_path.stem + ".dmp"), density)
        write_pgm(out / (ann_path.stem + "_overlay.pgm"), density_overlay(frame, density))
    print(f"rendered {len(annotation_files)} density maps -> {out}")
    return 0


def _count_rows(files: Sequence[Path], config: PipelineConfig) -> list[str]:
    tau = default_tau(config.kernel, config.blob_tau_relative)
    rows = ["map,blob_count,integral"]
    for path in files:
        try:
            density = read_dmp(path)
        except ValueError as exc:
            raise ValueError(f"{path.name}: {exc}") from None
        rows.append(f"{path.stem},{estimate_count(density, tau)},{density.integral():.4f}")
    return rows


def cmd_count(args: argparse.Namespace) -> int:
    config = _load_config(args)
    maps_dir = _require_dir(args.maps, "density maps")
    files = sorted(maps_dir.glob("*.dmp"))
    if not files:
        raise ValueError(f"no density maps (*.dmp) in {maps_dir}")
    rows = _count_rows(files, config)
    out = _out_dir(args, config)
    atomic_write_text(out / "counts.csv", "".join(row + "\n" for row in rows))
    for row in rows[1:]:
        print(row)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _read_named_csv(path: Path) -> list[tuple[str, list[str]]]:
    rows = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            raise ValueError(f"{path.name} line {lineno}: expected name,value fields")
        rows.append((parts[0], parts[1:]))
    return rows


def _symmetric_difference_error(left: set[str], right: set[str], what: str) -> None:
    if left != right:
        diff = sorted(left.symmetric_difference(right))
        raise ValueError(f"mismatched {what}: {', '.join(diff)}")


def _aggregate(reports: Sequence[tuple[str, MetricsReport]], runs: Sequence[SamplingRun]) -> MetricsReport:
    total = sum(r.total_frames for _, r in reports)
    saved = sum(r.saved for _, r in reports)
    tp = sum(r.tp for _, r in reports)
    fp = sum(r.fp for _, r in reports)
    fn = sum(r.fn for _, r in reports)
    prf = precision_recall_f1(tp, fp, fn)
    rate, rate_undefined = correct_frame_rate(saved - fp, saved)
    sampled_pool: list[np.ndarray] = []
    skipped_pool: list[np.ndarray] = []
    for run in runs:
        if run.per_frame_magnitude is None:
            continue
        magnitudes = run.per_frame_magnitude
        evaluated = ~np.isnan(magnitudes)
        mask = np.zeros(run.total_frames, dtype=bool)
        mask[list(run.saved_indices)] = True
        sampled_pool.append(magnitudes[evaluated & mask])
        skipped_pool.append(magnitudes[evaluated & ~mask])
    undefined = set(prf.undefined)
    if rate_undefined:
        undefined.add("correct_frame_rate")
    sampled = np.concatenate(sampled_pool) if sampled_pool else np.empty(0)
    skipped = np.concatenate(skipped_pool) if skipped_pool else np.empty(0)
    if sampled.size == 0:
        undefined.add("mean_magnitude_sampled")
    if skipped.size == 0:
        undefined.add("mean_magnitude_skipped")
    return MetricsReport(
        total_frames=total,
        saved=saved,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=prf.precision,
        recall=prf.recall,
        f1=prf.f1,
        reduction_ratio=reduction_ratio(saved, total) if total else 0.0,
        correct_frame_rate=rate,
        mean_magnitude_sampled=float(sampled.mean()) if sampled.size else 0.0,
        mean_magnitude_skipped=float(skipped.mean()) if skipped.size else 0.0,
        undefined=frozenset(undefined),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)

    if args.triples:
        rows = ["video,tp,fp,fn,precision,recall,f1"]
        lines = ["video  tp  fp  fn  precision  recall  f1"]
        for name, values in _read_named_csv(Path(args.triples)):
            if len(values) != 3:
                raise ValueError(f"triples row {name!r}: expected tp,fp,fn")
            tp, fp, fn = (int(v) for v in values)
            prf = precision_recall_f1(tp, fp, fn)
            rows.append(f"{name},{tp},{fp},{fn},{prf.precision:.3f},{prf.recall:.3f},{prf.f1:.3f}")
            lines.append(f"{name}  {tp}  {fp}  {fn}  {prf.precision:.3f}  {prf.recall:.3f}  {prf.f1:.3f}")
        atomic_write_text(out / "triples_report.csv", "".join(r + "\n" for r in rows))
        print("\n".join(lines))
        return 0

    if not args.runs or not args.labels:
        raise ValueError("missing inputs: provide --runs and --labels, or --triples")
    runs_dir = _require_dir(args.runs, "runs")
    labels_dir = _require_dir(args.labels, "labels")
    runs = {p.stem: run_from_csv(p.read_text(encoding="utf-8")) for p in sorted(runs_dir.glob("*.csv"))}
    labels = {p.stem: parse_labels(p.read_text(encoding="utf-8")) for p in sorted(labels_dir.glob("*.txt"))}
    if not runs:
        raise ValueError(f"no run files (*.csv) in {runs_dir}")
    _symmetric_difference_error(set(runs), set(labels), "video sets")

    names = sorted(runs)
    reports = [(name, evaluate_run(runs[name], labels[name], slack=args.slack)) for name in names]
    reports.append(("corpus", _aggregate(reports, [runs[n] for n in names])))

    table = report_table(reports)
    footer = ""
    if args.predicted or args.actual:
        if not (args.predicted and args.actual):
            raise ValueError("count MAE needs both --predicted and --actual")
        predicted = {n: float(v[0]) for n, v in _read_named_csv(Path(args.predicted))}
        actual = {n: float(v[0]) for n, v in _read_named_csv(Path(args.actual))}
        _symmetric_difference_error(set(predicted), set(actual), "count sets")
        order = sorted(predicted)
        footer = f"mae = {mae([predicted[n] for n in order], [actual[n] for n in order]):.4f}\n"

    atomic_write_text(out / "report.csv", report_csv(reports))
    atomic_write_text(out / "report.txt", table + footer)
    print(table + footer, end="")
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _load_config(args)
    input_path = args.input or config.input
    if not input_path:
        raise ValueError("no input: pass --input or set it in the config")
    _, frames, total = _frame_streamer(input_path)
    out = _out_dir(args, config)

    run = run_sampler(frames(), config.sampler, config.flow, total=total)
    atomic_write_text(out / "magnitudes.csv", run_to_csv(run))
    write_manifest(out / "manifest.txt", run)

    work_w, work_h = config.working_resolution
    saved_dir = out / "saved"
    processed_dir = out / "processed"
    saved_dir.mkdir(exist_ok=True)
    processed_dir.mkdir(exist_ok=True)

    annotations_dir = Path(args.annotations) if args.annotations else None
    if annotations_dir is not None:
        _require_dir(annotations_dir, "annotations")
        density_dir = out / "density"
        overlay_dir = out / "overlays"
        density_dir.mkdir(exist_ok=True)
        overlay_dir.mkdir(exist_ok=True)

    wanted = set(run.saved_indices)
    density_files: list[Path] = []
    for index, frame in enumerate(frames()):
        if index not in wanted:
            continue
        write_pgm(saved_dir / frame_filename(index), frame)
        resized = resize_bilinear(frame, work_w, work_h)
        processed = edge_overlay(resized, config.edge_alpha)
        write_pgm(processed_dir / frame_filename(index), processed)
        if annotations_dir is None:
            continue
        ann_path = annotations_dir / f"frame_{index:06d}.txt"
        if not ann_path.exists():
            raise FileNotFoundError(f"no annotations for saved frame {index}: {ann_path}")
        sx = work_w / frame.shape[1]
        sy = work_h / frame.shape[0]
        points = [
            (
                min(max((x + 0.5) * sx - 0.5, 0.0), work_w - 1.0),
                min(max((y + 0.5) * sy - 0.5, 0.0), work_h - 1.0),
            )
            for x, y in read_annotations(ann_path)
        ]
        density = render_density(points, work_w, work_h, config.kernel)
        path = density_dir / f"frame_{index:06d}.dmp"
        write_dmp(path, density)
        write_pgm(overlay_dir / frame_filename(index), density_overlay(processed, density))
        density_files.append(path)

    if density_files:
        rows = _count_rows(density_files, config)
        atomic_write_text(out / "counts.csv", "".join(row + "\n" for row in rows))
    print(f"pipeline: saved {run.saved_count} of {run.total_frames} frames -> {out}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="crowdflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="pipeline config file (dotted.key = value lines)")
        p.add_argument("--output", help="output directory (defaults to the config's output_dir)")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="corpus spec file (key = value lines)")
    p.add_argument("--output", default="corpus")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="run the configured sampler over a video")
    common(p)
    p.add_argument("--input", help="frame directory or .y4m file")
    p.add_argument("--seed", type=int, help="override the sampler seed")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("density", help="render densities from annotations or fuse realizations")
    common(p)
    p.add_argument("--annotations", help="directory of per-frame annotation files")
    p.add_argument("--frames", help="directory of matching frames (for overlays)")
    p.add_argument("--realizations", help="directory of .dmp realizations to fuse")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("count", help="blob-count density maps")
    common(p)
    p.add_argument("--maps", required=True, help="directory of .dmp files")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="score sampling runs against event labels")
    common(p)
    p.add_argument("--runs", help="directory of per-video run CSVs")
    p.add_argument("--labels", help="directory of per-video label files")
    p.add_argument("--slack", type=int, default=3)
    p.add_argument("--triples", help="CSV of name,tp,fp,fn rows to score directly")
    p.add_argument("--predicted", help="CSV of name,count predictions (for MAE)")
    p.add_argument("--actual", help="CSV of name,count ground truth (for MAE)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="sample, resize, edge-overlay, then density/count")
    common(p)
    p.add_argument("--input", help="frame directory or .y4m file")
    p.add_argument("--annotations", help="per-frame annotations at source resolution")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help or usage error
        return int(exc.code or 0)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # never let a traceback be the interface
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
