"""Frame decoding and preprocessing: PGM/Y4M input, grayscale, resize, edge overlay.

Frames are numpy rasters with values normalized to [0, 1]: grayscale frames are
(H, W) float32 arrays, RGB frames are (H, W, 3) float32 arrays.  Supported
inputs are binary PGM (P5) frame directories and YUV4MPEG2 streams; there is
deliberately no general video-codec path so decoding stays dependency-free and
bit-exact.
"""

from __future__ import annotations

import io
import os
import re
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np
from scipy import ndimage

# ITU-R BT.601 luma weights.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

# Peak response of a 3x3 Sobel gradient magnitude on a [0,1] image.
_SOBEL_MAX = 4.0 * np.sqrt(2.0)

_FRAME_NAME_RE = re.compile(r"frame_(\d{6})\.pgm$")


class FrameFormatError(ValueError):
    """Malformed PGM/Y4M input; message includes the offending byte offset."""


@dataclass(frozen=True)
class FrameSource:
    """Metadata for an ordered frame stream."""

    kind: str  # "frame-directory" or "y4m-stream"
    frame_rate: Fraction
    width: int
    height: int
    frame_count: int | None = None  # None when not known up front


# ---------------------------------------------------------------------------
# PGM (portable graymap, binary P5)
# ---------------------------------------------------------------------------

def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a binary P5 graymap into a float32 grayscale frame in [0, 1]."""
    if data[:2] != b"P5":
        raise FrameFormatError("not a binary PGM: expected magic 'P5' at offset 0")
    pos = 2
    fields = []
    while len(fields) < 3:
        token, pos = _next_pgm_token(data, pos)
        fields.append(token)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise FrameFormatError(f"non-numeric PGM header field before offset {pos}") from None
    if width < 1 or height < 1:
        raise FrameFormatError(f"bad PGM dimensions {width}x{height} in header ending at offset {pos}")
    if maxval == 0 or maxval > 65535:
        raise FrameFormatError(f"unsupported PGM maxval {maxval} in header ending at offset {pos}")

    bytes_per_sample = 1 if maxval < 256 else 2
    expected = width * height * bytes_per_sample
    raster = data[pos:pos + expected]
    if len(raster) < expected:
        raise FrameFormatError(
            f"truncated PGM raster at offset {pos + len(raster)}: "
            f"expected {expected} bytes, got {len(raster)}"
        )
    dtype = np.uint8 if bytes_per_sample == 1 else np.dtype(">u2")
    raw = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return (raw.astype(np.float64) / maxval).astype(np.float32)


def _next_pgm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Scan past whitespace and '#' comments to the next header token."""
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FrameFormatError(f"unterminated PGM comment at offset {pos}")
            pos = end + 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos:pos + 1] not in b" \t\r\n":
        pos += 1
    if pos == start:
        raise FrameFormatError(f"missing PGM header field at offset {start}")
    # The single whitespace byte after maxval separates header from raster.
    return data[start:pos], pos + 1


def encode_pgm(frame: np.ndarray, maxval: int = 255) -> bytes:
    """Encode a [0, 1] grayscale frame as binary P5. Canonical maxval is 255."""
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must be in [1, 65535], got {maxval}")
    frame = np.asarray(frame, dtype=np.float64)
    quantized = np.rint(np.clip(frame, 0.0, 1.0) * maxval)
    raw = quantized.astype(np.uint8 if maxval < 256 else np.dtype(">u2"))
    header = f"P5\n{frame.shape[1]} {frame.shape[0]}\n{maxval}\n".encode("ascii")
    return header + raw.tobytes()


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write through a sibling temp file and rename, so readers never see partials."""
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=str(target.parent), prefix=target.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_pgm(path: str | Path, frame: np.ndarray, maxval: int = 255) -> None:
    atomic_write_bytes(path, encode_pgm(frame, maxval))


# ---------------------------------------------------------------------------
# YUV4MPEG2 streams
# ---------------------------------------------------------------------------

_Y4M_SIGNATURE = b"YUV4MPEG2"
_C420_TAGS = {"420", "420jpeg", "420mpeg2", "420paldv"}


def decode_y4m_stream(
    stream: bytes | BinaryIO, as_gray: bool = True
) -> tuple[FrameSource, Iterator[np.ndarray]]:
    """Parse a YUV4MPEG2 stream into a FrameSource plus a frame iterator.

    Chroma-subsampled (C420 family) frames are upsampled and converted to RGB;
    with ``as_gray`` the luma plane is returned directly, which equals the
    BT.601 grayscale of that RGB conversion.  Cmono streams always yield
    grayscale frames.
    """
    reader = io.BytesIO(stream) if isinstance(stream, bytes) else stream
    header, header_len = _read_line(reader, 0)
    if not header.startswith(_Y4M_SIGNATURE + b" ") and header != _Y4M_SIGNATURE:
        raise FrameFormatError("missing YUV4MPEG2 signature at offset 0")

    width = height = 0
    rate = Fraction(0)
    colorspace = "420jpeg"  # stream default when no C parameter is present
    for param in header.split(b" ")[1:]:
        if not param:
            continue
        tag, value = chr(param[0]), param[1:].decode("ascii", "replace")
        if tag == "W":
            width = int(value)
        elif tag == "H":
            height = int(value)
        elif tag == "F":
            num, den = value.split(":")
            rate = Fraction(int(num), int(den))
        elif tag == "C":
            colorspace = value
        # I (interlacing), A (aspect) and X (extensions) do not affect decoding.

    if width < 1:
        raise FrameFormatError("Y4M header missing width (W) parameter")
    if height < 1:
        raise FrameFormatError("Y4M header missing height (H) parameter")
    if rate <= 0:
        raise FrameFormatError("Y4M header missing positive frame-rate (F) parameter")
    if colorspace == "mono":
        mono = True
    elif colorspace in _C420_TAGS:
        mono = False
    else:
        raise FrameFormatError(f"unsupported Y4M colorspace C{colorspace}")

    source = FrameSource(kind="y4m-stream", frame_rate=rate, width=width, height=height)
    return source, _iter_y4m_frames(reader, width, height, mono, as_gray, header_len)


def _read_line(reader: BinaryIO, offset: int) -> tuple[bytes, int]:
    line = reader.readline()
    if not line.endswith(b"\n"):
        raise FrameFormatError(f"unterminated Y4M header line at offset {offset}")
    return line[:-1], offset + len(line)


def _iter_y4m_frames(
    reader: BinaryIO, width: int, height: int, mono: bool, as_gray: bool, offset: int
) -> Iterator[np.ndarray]:
    y_size = width * height
    cw, ch = (width + 1) // 2, (height + 1) // 2
    payload = y_size if mono else y_size + 2 * cw * ch
    while True:
        marker = reader.readline()
        if marker == b"":
            return
        if not marker.startswith(b"FRAME") or not marker.endswith(b"\n"):
            raise FrameFormatError(f"expected FRAME marker at offset {offset}")
        offset += len(marker)
        planes = reader.read(payload)
        if len(planes) < payload:
            raise FrameFormatError(
                f"frame payload truncated at offset {offset + len(planes)}: "
                f"expected {payload} bytes, got {len(planes)}"
            )
        offset += payload
        y = np.frombuffer(planes, dtype=np.uint8, count=y_size).reshape(height, width)
        if mono or as_gray:
            yield (y.astype(np.float64) / 255.0).astype(np.float32)
            continue
        u = np.frombuffer(planes, np.uint8, cw * ch, y_size).reshape(ch, cw)
        v = np.frombuffer(planes, np.uint8, cw * ch, y_size + cw * ch).reshape(ch, cw)
        yield _yuv420_to_rgb(y, u, v)


def _yuv420_to_rgb(y: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Full-range BT.601 conversion with nearest-neighbor chroma upsampling.

    Chroma zero sits at code 128, the full-range 8-bit convention.
    """
    h, w = y.shape
    yf = y.astype(np.float64)
    cb = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    cr = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w].astype(np.float64) - 128.0
    rgb = np.empty((h, w, 3), dtype=np.float64)
    rgb[..., 0] = yf + 1.402 * cr
    rgb[..., 1] = yf - 0.344136 * cb - 0.714136 * cr
    rgb[..., 2] = yf + 1.772 * cb
    return (np.clip(rgb, 0.0, 255.0) / 255.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Frame directories (frame_000000.pgm ascending)
# ---------------------------------------------------------------------------

def frame_filename(index: int) -> str:
    return f"frame_{index:06d}.pgm"


def _frame_dir_files(root: Path) -> list[Path]:
    """PGM files in index order; names must be frame_000000.pgm .. contiguous."""
    files = sorted(p for p in root.iterdir() if p.suffix == ".pgm")
    if not files:
        raise FileNotFoundError(f"no .pgm frames in {root}")
    for i, p in enumerate(files):
        m = _FRAME_NAME_RE.match(p.name)
        if not m:
            raise FrameFormatError(f"non-conforming frame name {p.name!r} in {root}")
        if int(m.group(1)) != i:
            raise FrameFormatError(
                f"gap in frame numbering: expected {frame_filename(i)}, found {p.name} in {root}"
            )
    return files


def open_frame_dir(path: str | Path) -> FrameSource:
    """Describe a PGM frame directory (frame rate comes from optional fps.txt)."""
    root = Path(path)
    files = _frame_dir_files(root)
    first = read_pgm(files[0])
    return FrameSource(
        kind="frame-directory",
        frame_rate=_read_dir_fps(root),
        width=first.shape[1],
        height=first.shape[0],
        frame_count=len(files),
    )


def _read_dir_fps(root: Path) -> Fraction:
    fps_file = root / "fps.txt"
    if fps_file.exists():
        return Fraction(fps_file.read_text().strip())
    return Fraction(24)


def iter_frame_dir(path: str | Path) -> Iterator[np.ndarray]:
    for p in _frame_dir_files(Path(path)):
        yield read_pgm(p)


# ---------------------------------------------------------------------------
# Pixel-level preprocessing
# ---------------------------------------------------------------------------

def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (H, W, 3) RGB frame; (H, W) input passes through."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        return frame.astype(np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB frame, got shape {frame.shape}")
    gray = (
        LUMA_R * frame[..., 0].astype(np.float64)
        + LUMA_G * frame[..., 1].astype(np.float64)
        + LUMA_B * frame[..., 2].astype(np.float64)
    )
    return gray.astype(np.float32)


def resize_bilinear(frame: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered coordinate mapping.

    No anti-alias prefilter is applied, so strong downscales can alias; this is
    the intended speed/accuracy trade for 256x256 working frames.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target dimensions must be positive, got {out_w}x{out_h}")
    frame = np.asarray(frame)
    in_h, in_w = frame.shape[:2]
    if (in_w, in_h) == (out_w, out_h):
        return frame.copy()

    src = frame.astype(np.float64)
    sx = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    sy = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    x0 = sx.astype(np.intp)
    y0 = sy.astype(np.intp)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = sx - x0
    fy = sy - y0

    rows0 = src[y0]
    rows1 = src[y1]
    top = rows0[:, x0] * (1.0 - fx) + rows0[:, x1] * fx
    bot = rows1[:, x0] * (1.0 - fx) + rows1[:, x1] * fx
    out = top * (1.0 - fy)[:, None] + bot * fy[:, None]
    return out.astype(frame.dtype if frame.dtype == np.float64 else np.float32)


def sobel_magnitude(frame: np.ndarray) -> np.ndarray:
    """3x3 Sobel gradient magnitude, replicate-padded, scaled to [0, 1]."""
    if frame.shape[0] < 3 or frame.shape[1] < 3:
        raise ValueError(f"frame {frame.shape} smaller than the 3x3 Sobel kernel")
    src = np.asarray(frame, dtype=np.float64)
    gx = ndimage.sobel(src, axis=1, mode="nearest")
    gy = ndimage.sobel(src, axis=0, mode="nearest")
    return np.hypot(gx, gy) / _SOBEL_MAX


def edge_overlay(frame: np.ndarray, alpha: float = 0.3) -> np.ndarray:
    """Sharpen structure by adding a scaled Sobel edge layer onto the frame."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    edges = sobel_magnitude(frame)
    out = np.clip(np.asarray(frame, dtype=np.float64) + alpha * edges, 0.0, 1.0)
    return out.astype(np.float32)
