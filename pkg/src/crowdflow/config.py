"""Pipeline configuration and its flat text format.

The on-disk form is one `dotted.key = value` per line (UTF-8), for example
`sampler.motion_threshold = 1.2`.  Keys of nested sections carry the section
name as prefix; top-level settings are bare.  Unknown and duplicate keys are
errors so typos surface immediately, and parse -> format -> parse is exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .density import FusionConfig, KernelSpec
from .frameio import atomic_write_text
from .optflow import FlowParams
from .sampler import SamplerConfig


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the end-to-end pipeline needs, nested per stage."""

    input: str = ""
    output_dir: str = "out"
    working_resolution: tuple[int, int] = (256, 256)
    edge_alpha: float = 0.3
    blob_tau_relative: float = 0.25
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        width, height = self.working_resolution
        if width < 1 or height < 1:
            raise ValueError(f"working_resolution must be positive, got {width}x{height}")
        object.__setattr__(self, "working_resolution", (int(width), int(height)))
        if not 0.0 <= self.edge_alpha <= 1.0:
            raise ValueError(f"edge_alpha must be in [0, 1], got {self.edge_alpha}")
        if not 0.0 < self.blob_tau_relative < 1.0:
            raise ValueError(f"blob_tau_relative must be in (0, 1), got {self.blob_tau_relative}")


_SECTIONS: dict[str, type] = {
    "sampler": SamplerConfig,
    "flow": FlowParams,
    "kernel": KernelSpec,
    "fusion": FusionConfig,
}

# Top-level scalar keys and their value codecs.
_TOP_PARSERS = {
    "input": str,
    "output_dir": str,
    "edge_alpha": float,
    "blob_tau_relative": float,
}


def _parse_resolution(value: str) -> tuple[int, int]:
    parts = value.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected WIDTHxHEIGHT, got {value!r}")
    return int(parts[0]), int(parts[1])


def _section_parser(section: type, name: str):
    for spec in dataclasses.fields(section):
        if spec.name == name:
            kind = spec.type if isinstance(spec.type, str) else spec.type.__name__
            if kind == "int":
                return int
            if kind == "float":
                return float
            if kind == "str":
                return str
            break
    return None


def _render(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> PipelineConfig:
    """Build a PipelineConfig from dotted.key = value lines."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()

    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    for key, value in values.items():
        try:
            if key == "working_resolution":
                top[key] = _parse_resolution(value)
                continue
            if key in _TOP_PARSERS:
                top[key] = _TOP_PARSERS[key](value)
                continue
            section, sep, name = key.partition(".")
            parser = _section_parser(_SECTIONS[section], name) if sep and section in _SECTIONS else None
            if parser is None:
                raise KeyError(key)
            nested[section][name] = parser(value)
        except KeyError:
            raise ValueError(f"unknown config key {key!r}") from None
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from None
    return PipelineConfig(
        **top,  # type: ignore[arg-type]
        **{name: cls(**nested[name]) for name, cls in _SECTIONS.items()},
    )


def format_config(config: PipelineConfig) -> str:
    """Canonical serialization; parse(format_config(c)) == c."""
    lines = [
        f"input = {config.input}",
        f"output_dir = {config.output_dir}",
        f"working_resolution = {config.working_resolution[0]}x{config.working_resolution[1]}",
        f"edge_alpha = {_render(config.edge_alpha)}",
        f"blob_tau_relative = {_render(config.blob_tau_relative)}",
    ]
    for section in _SECTIONS:
        part = getattr(config, section)
        for spec in dataclasses.fields(part):
            lines.append(f"{section}.{spec.name} = {_render(getattr(part, spec.name))}")
    return "".join(line + "\n" for line in lines)


def read_config(path: str | Path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def write_config(path: str | Path, config: PipelineConfig) -> None:
    atomic_write_text(path, format_config(config))
