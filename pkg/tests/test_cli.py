import numpy as np
import pytest

from crowdflow.cli import density_overlay, main
from crowdflow.config import PipelineConfig, format_config
from crowdflow.density import (
    DensityMap,
    KernelSpec,
    read_dmp,
    render_density,
    write_annotations,
    write_dmp,
)
from crowdflow.frameio import read_pgm, write_pgm
from crowdflow.metrics import format_labels
from crowdflow.optflow import FlowParams
from crowdflow.sampler import (
    SamplerConfig,
    frame_to_frame_magnitudes,
    run_to_csv,
    uniform_sample,
)
from crowdflow.synth import SynthSpec, generate, write_video


def write_flat_frames(root, count, size=8):
    """A frame directory of identical tiny frames (content never matters)."""
    root.mkdir(parents=True)
    frame = np.full((size, size), 0.5, dtype=np.float64)
    for i in range(count):
        write_pgm(root / f"frame_{i:06d}.pgm", frame)
    (root / "fps.txt").write_text("24\n")


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def test_sample_uniform_stride_30_writes_40_manifest_entries(tmp_path):
    frames = tmp_path / "frames"
    write_flat_frames(frames, 1177)
    cfg = tmp_path / "cfg"
    cfg.write_text("sampler.strategy = uniform\nsampler.stride = 30\n")
    out = tmp_path / "out"
    assert main(["sample", "--input", str(frames), "--config", str(cfg), "--output", str(out)]) == 0
    manifest = (out / "manifest.txt").read_text().split()
    assert len(manifest) == 40
    assert manifest[0] == "frame_000000.pgm"
    # saved frames are bit-exact copies of the source files
    assert (out / "saved" / "frame_000030.pgm").read_bytes() == (frames / "frame_000030.pgm").read_bytes()
    assert (out / "magnitudes.csv").read_text().startswith("frame_index,mean_magnitude,saved")


def test_sample_event_hits_every_burst(tmp_path):
    spec = SynthSpec(width=48, height=48, frames=90, n_people=4, base_speed=0.05,
                     bursts=((20, 27, 30.0), (45, 52, 30.0), (70, 77, 30.0)),
                     dot_sigma=2.0, seed=6)
    video = write_video(spec, tmp_path / "video")
    frames, _, _ = generate(spec)
    params = FlowParams(pyramid_levels=2)
    magnitudes = frame_to_frame_magnitudes(frames, params)
    fast = {t for s, e, _ in spec.bursts for t in range(s, e + 1)}
    quiet = np.array([m for t, m in enumerate(magnitudes, start=1) if t not in fast])
    burst = np.array([m for t, m in enumerate(magnitudes, start=1) if t in fast])
    threshold = float((quiet.max() + burst.min()) / 2.0)

    cfg = tmp_path / "cfg"
    cfg.write_text(
        "sampler.strategy = event\n"
        f"sampler.motion_threshold = {threshold!r}\n"
        "sampler.min_gap = 1\n"
        "flow.pyramid_levels = 2\n"
    )
    out = tmp_path / "out"
    assert main(["sample", "--input", str(video / "frames"), "--config", str(cfg),
                 "--output", str(out)]) == 0
    saved = [int(name[6:12]) for name in (out / "manifest.txt").read_text().split()]
    for start, end, _ in spec.bursts:
        assert any(start <= i <= end for i in saved), (start, end, saved)


def test_sample_empty_directory_is_an_io_error(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["sample", "--input", str(empty), "--output", str(tmp_path / "out")]) == 2
    assert str(empty) in capsys.readouterr().err


def test_sample_without_input_is_a_validation_error(tmp_path, capsys):
    assert main(["sample", "--output", str(tmp_path / "out")]) == 1
    assert "input" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------

def test_density_renders_overlays_brighter_at_heads(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    frame = np.full((64, 64), 0.2, dtype=np.float64)
    write_pgm(frames / "frame_000000.pgm", frame)
    heads = [(10.0, 10.0), (40.0, 12.0), (15.0, 40.0), (50.0, 50.0), (30.0, 28.0)]
    annotations = tmp_path / "ann"
    annotations.mkdir()
    write_annotations(annotations / "frame_000000.txt", heads)

    out = tmp_path / "out"
    assert main(["density", "--annotations", str(annotations), "--frames", str(frames),
                 "--output", str(out)]) == 0
    density = read_dmp(out / "frame_000000.dmp")
    assert density.integral() == pytest.approx(5.0, abs=1e-6)
    overlay = read_pgm(out / "frame_000000_overlay.pgm")
    for x, y in heads:
        assert overlay[int(y), int(x)] > 0.2 + 0.25  # clearly brighter than the plain frame


def test_density_zero_annotations_overlay_equals_frame(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    write_pgm(frames / "frame_000000.pgm", np.random.default_rng(0).random((32, 32)))
    annotations = tmp_path / "ann"
    annotations.mkdir()
    (annotations / "frame_000000.txt").write_text("")
    out = tmp_path / "out"
    assert main(["density", "--annotations", str(annotations), "--frames", str(frames),
                 "--output", str(out)]) == 0
    assert (out / "frame_000000_overlay.pgm").read_bytes() == (frames / "frame_000000.pgm").read_bytes()


def test_density_fuses_external_realizations(tmp_path):
    rng = np.random.default_rng(1)
    clean = render_density([(16.0, 16.0), (8.0, 24.0)], 32, 32).values
    realizations = tmp_path / "maps"
    realizations.mkdir()
    for i in range(5):
        noisy = np.clip(clean + 0.003 * rng.standard_normal(clean.shape), 0.0, None)
        write_dmp(realizations / f"r{i}.dmp", DensityMap(values=noisy))
    out = tmp_path / "out"
    assert main(["density", "--realizations", str(realizations), "--output", str(out)]) == 0
    fused = read_dmp(out / "fused.dmp")
    assert fused.width == 32 and fused.height == 32


def test_density_missing_inputs_names_what_is_absent(tmp_path, capsys):
    assert main(["density", "--output", str(tmp_path / "out")]) == 1
    err = capsys.readouterr().err
    assert "--annotations" in err and "--realizations" in err
    assert main(["density", "--annotations", str(tmp_path), "--output", str(tmp_path / "o2")]) == 1
    assert "--frames" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# count
# ---------------------------------------------------------------------------

def test_count_reports_blobs_and_integral(tmp_path):
    maps = tmp_path / "maps"
    maps.mkdir()
    heads = [(8.0, 8.0), (40.0, 8.0), (8.0, 40.0), (40.0, 40.0), (24.0, 24.0)]
    write_dmp(maps / "five.dmp", render_density(heads, 56, 56))
    write_dmp(maps / "zero.dmp", DensityMap(values=np.zeros((16, 16))))
    out = tmp_path / "out"
    assert main(["count", "--maps", str(maps), "--output", str(out)]) == 0
    rows = (out / "counts.csv").read_text().splitlines()
    assert rows[0] == "map,blob_count,integral"
    assert rows[1] == "five,5,5.0000"
    assert rows[2] == "zero,0,0.0000"


def test_count_corrupt_map_is_a_format_error_naming_the_file(tmp_path, capsys):
    maps = tmp_path / "maps"
    maps.mkdir()
    (maps / "broken.dmp").write_bytes(b"XXXX" + bytes(16))
    assert main(["count", "--maps", str(maps), "--output", str(tmp_path / "out")]) == 1
    assert "broken.dmp" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def test_eval_triples_report_rounded_metrics(tmp_path):
    triples = tmp_path / "triples.csv"
    triples.write_text("v1,30,4,5\nv6,21,2,1\n")
    out = tmp_path / "out"
    assert main(["eval", "--triples", str(triples), "--output", str(out)]) == 0
    rows = (out / "triples_report.csv").read_text().splitlines()
    assert rows[1] == "v1,30,4,5,0.882,0.857,0.869"
    assert rows[2] == "v6,21,2,1,0.913,0.955,0.934"


def test_eval_runs_against_labels(tmp_path):
    runs = tmp_path / "runs"
    labels = tmp_path / "labels"
    runs.mkdir()
    labels.mkdir()
    # sampler that saved everything against labels covering everything -> recall 1.0
    all_run = uniform_sample(12, 1)
    (runs / "a.csv").write_text(run_to_csv(all_run))
    (labels / "a.txt").write_text("0,11\n")
    sparse = uniform_sample(12, 6)
    (runs / "b.csv").write_text(run_to_csv(sparse))
    (labels / "b.txt").write_text("5,7\n")
    out = tmp_path / "out"
    assert main(["eval", "--runs", str(runs), "--labels", str(labels), "--slack", "0",
                 "--output", str(out)]) == 0
    report = (out / "report.csv").read_text().splitlines()
    assert report[0].startswith("video,")
    by_name = {row.split(",")[0]: row.split(",") for row in report[1:]}
    assert by_name["a"][7] == "1.0000"       # recall column
    assert set(by_name) == {"a", "b", "corpus"}
    assert (out / "report.txt").read_text().count("corpus") == 1


def test_eval_mismatched_sets_lists_the_difference(tmp_path, capsys):
    runs = tmp_path / "runs"
    labels = tmp_path / "labels"
    runs.mkdir()
    labels.mkdir()
    (runs / "a.csv").write_text(run_to_csv(uniform_sample(5, 2)))
    (labels / "b.txt").write_text("0,1\n")
    assert main(["eval", "--runs", str(runs), "--labels", str(labels),
                 "--output", str(tmp_path / "out")]) == 1
    err = capsys.readouterr().err
    assert "a" in err and "b" in err


def test_eval_mae_footer(tmp_path):
    runs = tmp_path / "runs"
    labels = tmp_path / "labels"
    runs.mkdir()
    labels.mkdir()
    (runs / "a.csv").write_text(run_to_csv(uniform_sample(10, 2)))
    (labels / "a.txt").write_text("0,9\n")
    predicted = tmp_path / "pred.csv"
    actual = tmp_path / "true.csv"
    predicted.write_text("a,12\n")
    actual.write_text("a,10\n")
    out = tmp_path / "out"
    assert main(["eval", "--runs", str(runs), "--labels", str(labels),
                 "--predicted", str(predicted), "--actual", str(actual),
                 "--output", str(out)]) == 0
    assert "mae = 2.0000" in (out / "report.txt").read_text()


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def test_synth_writes_corpus_from_spec_file(tmp_path):
    spec = tmp_path / "corpus.spec"
    spec.write_text(
        "videos = 2\nwidth = 32\nheight = 32\nframes = 400\nn_people = 3\n"
        "burst_frames = 60\nmin_bursts = 2\nmax_bursts = 3\nseed = 5\n"
    )
    out = tmp_path / "corpus"
    assert main(["synth", "--spec", str(spec), "--output", str(out), "--workers", "2"]) == 0
    assert (out / "videos.txt").read_text().split() == ["video_000", "video_001"]
    for name in ["video_000", "video_001"]:
        assert (out / name / "manifest.txt").exists()
        assert (out / name / "frames" / "frame_000399.pgm").exists()


def test_synth_invalid_spec_names_the_field(tmp_path, capsys):
    spec = tmp_path / "corpus.spec"
    spec.write_text("videos = 0\n")
    assert main(["synth", "--spec", str(spec), "--output", str(tmp_path / "c")]) == 1
    assert "videos" in capsys.readouterr().err
    spec.write_text("frames_total = 5\n")
    assert main(["synth", "--spec", str(spec), "--output", str(tmp_path / "c")]) == 1
    assert "frames_total" in capsys.readouterr().err


def test_synth_seed_override_changes_the_corpus(tmp_path):
    spec = tmp_path / "corpus.spec"
    spec.write_text("videos = 1\nwidth = 24\nheight = 24\nframes = 200\nn_people = 2\n"
                    "burst_frames = 20\nmin_bursts = 1\nmax_bursts = 1\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["synth", "--spec", str(spec), "--output", str(a), "--seed", "1"]) == 0
    assert main(["synth", "--spec", str(spec), "--output", str(b), "--seed", "1"]) == 0
    assert main(["synth", "--spec", str(spec), "--output", str(c), "--seed", "2"]) == 0
    sample = "video_000/frames/frame_000100.pgm"
    assert (a / sample).read_bytes() == (b / sample).read_bytes()
    assert (a / sample).read_bytes() != (c / sample).read_bytes()


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def test_pipeline_end_to_end(tmp_path):
    spec = SynthSpec(width=48, height=48, frames=60, n_people=3, base_speed=0.05,
                     bursts=(), dot_sigma=2.0, seed=4)
    video = write_video(spec, tmp_path / "video")
    config = PipelineConfig(
        working_resolution=(32, 32),
        sampler=SamplerConfig(strategy="uniform", stride=20),
        kernel=KernelSpec(sigma=1.5, truncation_radius=5.0),
    )
    cfg = tmp_path / "cfg"
    cfg.write_text(format_config(config))
    out = tmp_path / "out"
    assert main(["pipeline", "--input", str(video / "frames"), "--config", str(cfg),
                 "--annotations", str(video / "annotations"), "--output", str(out)]) == 0

    saved = (out / "manifest.txt").read_text().split()
    assert saved == ["frame_000000.pgm", "frame_000020.pgm", "frame_000040.pgm"]
    for name in saved:
        assert (out / "saved" / name).exists()
        processed = read_pgm(out / "processed" / name)
        assert processed.shape == (32, 32)
        assert (out / "overlays" / name).exists()
    density = read_dmp(out / "density" / "frame_000020.dmp")
    assert density.width == 32
    # interior heads survive the rescale with their mass intact
    assert density.integral() == pytest.approx(3.0, abs=1e-3)
    rows = (out / "counts.csv").read_text().splitlines()
    assert rows[0] == "map,blob_count,integral"
    assert len(rows) == 4


def test_pipeline_without_annotations_skips_density(tmp_path):
    frames = tmp_path / "frames"
    write_flat_frames(frames, 30, size=16)
    cfg = tmp_path / "cfg"
    cfg.write_text("sampler.strategy = uniform\nsampler.stride = 10\nworking_resolution = 16x16\n")
    out = tmp_path / "out"
    assert main(["pipeline", "--input", str(frames), "--config", str(cfg),
                 "--output", str(out)]) == 0
    assert (out / "processed" / "frame_000000.pgm").exists()
    assert not (out / "counts.csv").exists()


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def test_unknown_flag_is_a_validation_error(capsys):
    assert main(["sample", "--bogus"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_overlay_helper_is_identity_for_zero_maps():
    frame = np.random.default_rng(0).random((8, 8))
    zero = DensityMap(values=np.zeros((8, 8)))
    assert np.array_equal(density_overlay(frame, zero), frame)


def test_bad_config_path_is_io_error(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert main(["sample", "--input", str(tmp_path), "--config", str(missing)]) == 2
    assert "nope.cfg" in capsys.readouterr().err
