"""Event-driven video frame sampling and crowd density-map analysis."""

from crowdflow.config import PipelineConfig, parse_config, format_config, read_config, write_config
from crowdflow.density import (
    DensityMap,
    FusionConfig,
    KernelSpec,
    count_blobs,
    estimate_count,
    fuse_maps,
    read_annotations,
    read_dmp,
    render_density,
    write_annotations,
    write_dmp,
)
from crowdflow.frameio import (
    FrameFormatError,
    FrameSource,
    decode_y4m_stream,
    edge_overlay,
    iter_frame_dir,
    open_frame_dir,
    read_pgm,
    resize_bilinear,
    to_grayscale,
    write_pgm,
)
from crowdflow.metrics import (
    EventLabels,
    MetricsReport,
    evaluate_run,
    mae,
    parse_labels,
    precision_recall_f1,
)
from crowdflow.optflow import FlowField, FlowParams, farneback_flow, flow_between, mean_motion
from crowdflow.sampler import (
    SamplerConfig,
    SamplingRun,
    calibrate_threshold,
    event_sample,
    random_sample,
    read_manifest,
    run_from_csv,
    run_sampler,
    run_to_csv,
    stratified_sample,
    uniform_sample,
    write_manifest,
)
from crowdflow.synth import CorpusSpec, SynthSpec, generate, write_corpus, write_video

__version__ = "0.1.0"

__all__ = [
    "CorpusSpec",
    "DensityMap",
    "EventLabels",
    "FlowField",
    "FlowParams",
    "FrameFormatError",
    "FrameSource",
    "FusionConfig",
    "KernelSpec",
    "MetricsReport",
    "PipelineConfig",
    "SamplerConfig",
    "SamplingRun",
    "SynthSpec",
    "calibrate_threshold",
    "count_blobs",
    "decode_y4m_stream",
    "edge_overlay",
    "estimate_count",
    "evaluate_run",
    "event_sample",
    "farneback_flow",
    "flow_between",
    "format_config",
    "fuse_maps",
    "generate",
    "iter_frame_dir",
    "mae",
    "mean_motion",
    "open_frame_dir",
    "parse_config",
    "parse_labels",
    "precision_recall_f1",
    "random_sample",
    "read_annotations",
    "read_config",
    "read_dmp",
    "read_manifest",
    "read_pgm",
    "render_density",
    "resize_bilinear",
    "run_from_csv",
    "run_sampler",
    "run_to_csv",
    "stratified_sample",
    "to_grayscale",
    "uniform_sample",
    "write_annotations",
    "write_config",
    "write_corpus",
    "write_dmp",
    "write_manifest",
    "write_pgm",
    "write_video",
]
