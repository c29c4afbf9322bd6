import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdflow.optflow import FlowParams
from crowdflow.sampler import (
    SamplerConfig,
    SamplingRun,
    adaptive_from_magnitudes,
    adaptive_sample,
    calibrate_threshold,
    event_sample,
    frame_to_frame_magnitudes,
    keyframe_sample,
    random_sample,
    read_manifest,
    run_from_csv,
    run_sampler,
    run_to_csv,
    stratified_sample,
    uniform_sample,
    write_manifest,
)
from helpers import shift_stream, textured_frame

FAST_FLOW = FlowParams(pyramid_levels=2)


# ---------------------------------------------------------------------------
# event sampling
# ---------------------------------------------------------------------------

def test_event_gating_on_known_motion():
    """Shifts [0, .1, 2, 2.2] vs threshold 1: frame 2 trips the gate, frame 3
    measures only 0.2 against the new anchor."""
    frames = shift_stream([0.0, 0.1, 2.0, 2.2])
    config = SamplerConfig(strategy="event", motion_threshold=1.0)
    run = event_sample(frames, config, FAST_FLOW)
    assert run.saved_indices == (0, 2)
    assert run.total_frames == 4
    assert math.isnan(run.per_frame_magnitude[0])
    np.testing.assert_allclose(run.per_frame_magnitude[1:], [0.1, 2.0, 0.2], atol=0.05)


def test_event_threshold_zero_saves_everything():
    frames = shift_stream([0.0, 0.2, 0.4, 0.6])
    run = event_sample(frames, SamplerConfig(motion_threshold=0.0), FAST_FLOW)
    assert run.saved_indices == (0, 1, 2, 3)


def test_event_infinite_threshold_saves_only_first():
    frames = shift_stream([0.0, 1.0, 2.0])
    run = event_sample(frames, SamplerConfig(motion_threshold=math.inf), FAST_FLOW)
    assert run.saved_indices == (0,)


def test_event_anchored_accumulates_drift():
    """Slow drift never clears the gate frame-to-frame but does against an anchor."""
    frames = shift_stream([0.0, 0.4, 0.8, 1.2, 1.6])
    anchored = event_sample(
        frames, SamplerConfig(motion_threshold=1.0, reference_mode="anchored"), FAST_FLOW
    )
    rolling = event_sample(
        frames, SamplerConfig(motion_threshold=1.0, reference_mode="frame-to-frame"), FAST_FLOW
    )
    assert anchored.saved_indices == (0, 3)
    assert rolling.saved_indices == (0,)


def test_event_min_gap_spaces_saves():
    frames = shift_stream([0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
    run = event_sample(frames, SamplerConfig(motion_threshold=0.0, min_gap=2), FAST_FLOW)
    assert run.saved_indices == (0, 2, 4)


def test_event_saved_magnitudes_clear_threshold():
    """Anchored mode with min_gap 0: every saved frame except 0 measured >= threshold."""
    shifts = np.cumsum(np.random.default_rng(3).uniform(0, 0.8, size=12))
    run = event_sample(
        shift_stream([0.0, *shifts]), SamplerConfig(motion_threshold=0.9), FAST_FLOW
    )
    for idx in run.saved_indices[1:]:
        assert run.per_frame_magnitude[idx] >= 0.9


def test_event_empty_source_errors():
    with pytest.raises(ValueError, match="at least one frame"):
        event_sample([], SamplerConfig(), FAST_FLOW)


def test_event_is_deterministic():
    frames = shift_stream([0.0, 0.6, 1.3, 1.4])
    config = SamplerConfig(motion_threshold=0.5)
    a = event_sample(frames, config, FAST_FLOW)
    b = event_sample(frames, config, FAST_FLOW)
    assert a.saved_indices == b.saved_indices
    np.testing.assert_array_equal(a.per_frame_magnitude, b.per_frame_magnitude)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def test_calibrate_threshold_nearest_rank():
    """Consecutive shifts of 1,2,3,4 px: p50 is the 2nd ranked magnitude."""
    frames = shift_stream([0.0, 1.0, 3.0, 6.0, 10.0], size=128)
    t50 = calibrate_threshold(frames, FAST_FLOW, percentile=50)
    t100 = calibrate_threshold(frames, FAST_FLOW, percentile=100)
    assert t50 == pytest.approx(2.0, abs=0.08)
    assert t100 == pytest.approx(4.0, abs=0.08)


def test_calibrate_threshold_single_pair():
    frames = shift_stream([0.0, 1.5])
    assert calibrate_threshold(frames, FAST_FLOW, 85) == pytest.approx(1.5, abs=0.05)


def test_calibrate_threshold_requires_two_frames():
    with pytest.raises(ValueError, match="two frames"):
        calibrate_threshold(shift_stream([0.0]), FAST_FLOW)


def test_calibrate_threshold_percentile_bounds():
    with pytest.raises(ValueError, match="percentile"):
        calibrate_threshold(shift_stream([0.0, 1.0]), FAST_FLOW, percentile=0)


def test_frame_to_frame_magnitudes_length():
    mags = frame_to_frame_magnitudes(shift_stream([0.0, 0.5, 1.0]), FAST_FLOW)
    assert mags.shape == (2,)
    np.testing.assert_allclose(mags, [0.5, 0.5], atol=0.05)


# ---------------------------------------------------------------------------
# offline baselines
# ---------------------------------------------------------------------------

def test_uniform_examples():
    assert uniform_sample(10, 5).saved_indices == (0, 5)
    assert uniform_sample(4, 1).saved_indices == (0, 1, 2, 3)
    assert uniform_sample(1177, 30).saved_count == 40


@given(total=st.integers(1, 200), stride=st.integers(1, 50))
def test_uniform_closed_form(total, stride):
    run = uniform_sample(total, stride)
    assert run.saved_indices == tuple(range(0, total, stride))
    assert run.saved_count == math.ceil(total / stride)


def test_uniform_rejects_zero_stride():
    with pytest.raises(ValueError, match="stride"):
        uniform_sample(10, 0)


def test_random_sample_contract():
    run = random_sample(50, 10, seed=7)
    assert run.saved_count == 10
    assert len(set(run.saved_indices)) == 10
    assert all(0 <= i < 50 for i in run.saved_indices)
    assert run.saved_indices == random_sample(50, 10, seed=7).saved_indices
    assert run.saved_indices != random_sample(50, 10, seed=8).saved_indices


def test_random_sample_edges():
    assert random_sample(5, 5, 0).saved_indices == (0, 1, 2, 3, 4)
    assert random_sample(5, 0, 0).saved_indices == ()
    with pytest.raises(ValueError):
        random_sample(5, 6, 0)


def test_stratified_examples():
    assert stratified_sample(10, 2, 1).saved_indices == (0, 5)
    assert stratified_sample(1177, 15, 1).saved_count == 15
    assert stratified_sample(12, 1, 4).saved_indices == (0, 3, 6, 9)


@given(
    total=st.integers(1, 120),
    segments=st.integers(1, 20),
    per_segment=st.integers(1, 3),
)
def test_stratified_indices_stay_in_their_segment(total, segments, per_segment):
    if segments > total:
        with pytest.raises(ValueError):
            stratified_sample(total, segments, per_segment)
        return
    run = stratified_sample(total, segments, per_segment)
    for idx in run.saved_indices:
        assert 0 <= idx < total
    # every segment with nonzero length contributes its start index
    starts = {s * total // segments for s in range(segments)}
    assert starts <= set(run.saved_indices)


# ---------------------------------------------------------------------------
# keyframe baseline
# ---------------------------------------------------------------------------

def test_keyframe_static_video_takes_lowest_indices():
    frames = [np.full((8, 8), 0.5) for _ in range(6)]
    assert keyframe_sample(frames, 3).saved_indices == (0, 1, 2)


def test_keyframe_single_cut():
    frames = [np.zeros((8, 8))] * 4 + [np.ones((8, 8))] * 4
    assert keyframe_sample(frames, 1).saved_indices == (4,)


def test_keyframe_matches_brute_force_scores():
    rng = np.random.default_rng(11)
    frames = [rng.random((6, 6)) for _ in range(15)]
    scores = [0.0] + [
        float(np.abs(frames[i] - frames[i - 1]).mean()) for i in range(1, 15)
    ]
    maxima = [
        i
        for i in range(15)
        if (i == 0 or scores[i] >= scores[i - 1]) and (i == 14 or scores[i] >= scores[i + 1])
    ]
    expect = tuple(sorted(sorted(maxima, key=lambda i: (-scores[i], i))[:3]))
    assert keyframe_sample(frames, 3).saved_indices == expect


def test_keyframe_fills_when_maxima_run_out():
    ramp = [np.full((4, 4), v) for v in (0.0, 0.1, 0.3, 0.6)]  # strictly growing diffs
    run = keyframe_sample(ramp, 3)
    assert run.saved_count == 3


def test_keyframe_requires_frames_and_positive_k():
    with pytest.raises(ValueError):
        keyframe_sample([], 1)
    with pytest.raises(ValueError):
        keyframe_sample([np.zeros((4, 4))], 0)


# ---------------------------------------------------------------------------
# adaptive baseline
# ---------------------------------------------------------------------------

def test_adaptive_constant_magnitudes_never_fire():
    """With zero variance the band sits strictly above the mean (sigma floor),
    so a constant series can never exceed it."""
    run = adaptive_from_magnitudes([0.4] * 20, window=5, sensitivity=2.0)
    assert run.saved_indices == (0,)


def test_adaptive_static_video_never_fires():
    frames = [textured_frame(64, 64, seed=5)] * 12
    run = adaptive_sample(frames, window=4, sensitivity=1.0, flow_params=FAST_FLOW)
    assert run.saved_indices == (0,)


def test_adaptive_spike_is_saved_and_replayable():
    """A lone jump after warm-up fires; replaying the band rule on the
    recorded magnitudes reproduces the decisions exactly."""
    steps = [0.3] * 9 + [1.5] + [0.3] * 5
    shifts = np.concatenate([[0.0], np.cumsum(steps)])
    run = adaptive_sample(shift_stream(shifts, size=128), window=5, sensitivity=2.0,
                          flow_params=FAST_FLOW)
    assert run.saved_indices == (0, 10)

    saved = [0]
    history = []
    last = 0
    for t in range(1, run.total_frames):
        m = run.per_frame_magnitude[t]
        if len(history) >= 5:
            recent = history[-5:]
            band = np.mean(recent) + 2.0 * (np.std(recent) + 1e-6)
            if m > band and t - last >= 0:
                saved.append(t)
                last = t
        history.append(m)
    assert tuple(saved) == run.saved_indices


def test_adaptive_spike_during_warmup_is_ignored():
    steps = [0.3, 0.3, 1.5, 0.3, 0.3, 0.3, 0.3]
    shifts = np.concatenate([[0.0], np.cumsum(steps)])
    run = adaptive_sample(shift_stream(shifts), window=5, sensitivity=2.0, flow_params=FAST_FLOW)
    assert run.saved_indices == (0,)


def test_adaptive_argument_validation():
    with pytest.raises(ValueError):
        adaptive_sample(shift_stream([0.0, 1.0]), window=0)
    with pytest.raises(ValueError):
        adaptive_sample(shift_stream([0.0, 1.0]), window=3, sensitivity=0.0)
    with pytest.raises(ValueError, match="at least one frame"):
        adaptive_sample([], window=3)


# ---------------------------------------------------------------------------
# dispatch, config, serialization
# ---------------------------------------------------------------------------

def test_run_sampler_dispatches_each_strategy():
    frames = shift_stream([0.0, 0.5, 1.0, 1.5])
    # frame 2 trips the 0.9 gate; frame 3 then measures 0.5 against the new anchor
    assert run_sampler(frames, SamplerConfig(strategy="event", motion_threshold=0.9),
                       FAST_FLOW).saved_indices == (0, 2)
    assert run_sampler(frames, SamplerConfig(strategy="uniform", stride=2),
                       total=4).saved_indices == (0, 2)
    assert run_sampler(frames, SamplerConfig(strategy="random", count=2, seed=1),
                       total=4).saved_count == 2
    assert run_sampler(frames, SamplerConfig(strategy="stratified", segments=2),
                       total=4).saved_indices == (0, 2)
    assert run_sampler(frames, SamplerConfig(strategy="keyframe", count=1),
                       FAST_FLOW).saved_count == 1
    assert run_sampler(frames, SamplerConfig(strategy="adaptive", window=2),
                       FAST_FLOW).saved_indices == (0,)


def test_run_sampler_counts_stream_when_total_missing():
    frames = shift_stream([0.0, 0.0, 0.0, 0.0, 0.0])
    assert run_sampler(iter(frames), SamplerConfig(strategy="uniform", stride=2)
                       ).saved_indices == (0, 2, 4)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"strategy": "nope"},
        {"motion_threshold": -1.0},
        {"min_gap": -1},
        {"reference_mode": "sometimes"},
        {"stride": 0},
        {"count": -1},
        {"segments": 0},
        {"per_segment": 0},
        {"window": 0},
        {"sensitivity": 0.0},
    ],
)
def test_sampler_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_sampling_run_invariants():
    with pytest.raises(ValueError, match="strictly increasing"):
        SamplingRun(total_frames=5, saved_indices=(0, 3, 3))
    with pytest.raises(ValueError, match="out of range"):
        SamplingRun(total_frames=5, saved_indices=(0, 5))
    with pytest.raises(ValueError, match="length"):
        SamplingRun(total_frames=5, saved_indices=(0,), per_frame_magnitude=np.zeros(3))


def test_run_csv_roundtrip_with_magnitudes():
    run = SamplingRun(
        total_frames=4,
        saved_indices=(0, 2),
        per_frame_magnitude=np.array([math.nan, 0.125, 2.5, 0.2]),
    )
    text = run_to_csv(run)
    lines = text.splitlines()
    assert lines[0] == "frame_index,mean_magnitude,saved"
    assert lines[1] == "0,nan,1"
    assert lines[2] == "1,0.125,0"
    back = run_from_csv(text)
    assert back.saved_indices == run.saved_indices
    assert back.total_frames == 4
    assert math.isnan(back.per_frame_magnitude[0])
    np.testing.assert_allclose(back.per_frame_magnitude[1:], run.per_frame_magnitude[1:])


def test_run_csv_roundtrip_without_magnitudes():
    run = uniform_sample(6, 3)
    back = run_from_csv(run_to_csv(run))
    assert back.saved_indices == (0, 3)
    assert back.per_frame_magnitude is None


def test_run_csv_rejects_foreign_header():
    with pytest.raises(ValueError, match="header"):
        run_from_csv("a,b,c\n1,2,3\n")


def test_manifest_roundtrip(tmp_path):
    run = uniform_sample(100, 40)
    path = tmp_path / "manifest.txt"
    write_manifest(path, run)
    assert read_manifest(path) == ["frame_000000.pgm", "frame_000040.pgm", "frame_000080.pgm"]


@settings(max_examples=25, deadline=None)
@given(
    total=st.integers(1, 60),
    k=st.integers(0, 60),
    seed=st.integers(0, 2**31),
)
def test_random_sample_property(total, k, seed):
    if k > total:
        with pytest.raises(ValueError):
            random_sample(total, k, seed)
        return
    run = random_sample(total, k, seed)
    assert run.saved_count == k
    assert all(b > a for a, b in zip(run.saved_indices, run.saved_indices[1:]))
