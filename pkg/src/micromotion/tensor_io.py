"""Core data types and their on-disk formats.

Three value types travel through the whole pipeline:

* :class:`VideoTensor` -- a T x H x W single-precision sample grid with a
  frame rate (transmission or fluorescence video, per-pixel predictions,
  and matched-filter templates all use it).
* :class:`Trace` -- a length-T univariate time series.
* :class:`SpikeTrain` -- ascending frame indices of detected or
  ground-truth events.

All three are immutable after construction (the wrapped arrays are marked
read-only) and therefore safe to share across parallel workers.

On-disk formats
---------------
``MMV1`` binary video: the 4-byte magic ``MMV1``, little-endian uint32
``T``, ``H``, ``W``, a little-endian float32 ``fps``, then ``T*H*W``
little-endian float32 samples in frame-major, row-major order.

Traces are two-column CSV text: one header line ``fps,<value>`` followed
by ``frame_index,value`` rows.  Values are printed with 9 significant
digits, enough to round-trip float32 exactly.

Spike trains are CSV text: one header line ``total_frames,<T>`` followed
by one ascending frame index per row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VIDEO_MAGIC = b"MMV1"
_VIDEO_HEADER = struct.Struct("<4sIIIf")


class FormatError(ValueError):
    """A file or value violates one of the documented formats."""


class BadMagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedFileError(FormatError):
    """The file ends before the declared payload is complete."""


class NonFiniteDataError(FormatError):
    """Samples contain NaN or infinity."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _check_fps(fps) -> float:
    # fps is stored as float32 on disk; normalize at construction so
    # write -> read is the identity bit for bit.
    fps = float(np.float32(fps))
    if not np.isfinite(fps) or fps <= 0:
        raise FormatError(f"fps must be a positive finite number, got {fps}")
    return fps


@dataclass(frozen=True, eq=False)
class VideoTensor:
    """A T x H x W float32 video with frame rate ``fps``.

    ``data`` is stored C-contiguous (frame-major, then row-major), so
    ``data[t]`` is a contiguous frame and ``data[:, y, x]`` a strided
    per-pixel trace.
    """

    data: np.ndarray
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise FormatError(f"video data must be T x H x W, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise FormatError(f"video dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteDataError("video samples must be finite")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "fps", _check_fps(self.fps))

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def pixel_trace(self, x: int, y: int) -> "Trace":
        """The single-pixel time series at column ``x``, row ``y``."""
        return Trace(self.data[:, y, x].copy(), self.fps)


@dataclass(frozen=True, eq=False)
class Trace:
    """A length-T float32 time series with frame rate ``fps``."""

    data: np.ndarray
    fps: float

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 1 or arr.size < 1:
            raise FormatError(f"trace data must be a non-empty 1D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteDataError("trace samples must be finite")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "fps", _check_fps(self.fps))

    @property
    def frames(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Strictly ascending event frame indices within ``[0, total_frames)``."""

    indices: np.ndarray
    total_frames: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise FormatError("spike indices must be a 1D sequence")
        total = int(self.total_frames)
        if total < 1:
            raise FormatError("total_frames must be positive")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= total:
                raise FormatError(f"spike indices must lie in [0, {total})")
            if np.any(np.diff(idx) <= 0):
                raise FormatError("spike indices must be strictly increasing")
        object.__setattr__(self, "indices", _freeze(idx))
        object.__setattr__(self, "total_frames", total)

    def __len__(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class RoiRect:
    """A w x h pixel rectangle with top-left corner (x0, y0)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise FormatError(f"roi extent must be positive, got {self.w} x {self.h}")
        if self.x0 < 0 or self.y0 < 0:
            raise FormatError(f"roi origin must be non-negative, got ({self.x0}, {self.y0})")

    def check_inside(self, height: int, width: int) -> None:
        if self.x0 + self.w > width or self.y0 + self.h > height:
            raise FormatError(
                f"roi {self} does not fit inside a {height} x {width} frame"
            )

    @property
    def slices(self) -> tuple[slice, slice]:
        """(row, column) slices selecting the rectangle in a frame."""
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


# ---------------------------------------------------------------------------
# MMV1 binary video format


def write_video(video: VideoTensor, path) -> None:
    """Write ``video`` to ``path`` in the MMV1 binary format."""
    header = _VIDEO_HEADER.pack(
        VIDEO_MAGIC, video.frames, video.height, video.width, video.fps
    )
    payload = np.ascontiguousarray(video.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_video(path) -> VideoTensor:
    """Read an MMV1 file back into a :class:`VideoTensor`."""
    raw = Path(path).read_bytes()
    if len(raw) < _VIDEO_HEADER.size:
        raise TruncatedFileError(f"{path}: file shorter than the MMV1 header")
    magic, t, h, w, fps = _VIDEO_HEADER.unpack_from(raw)
    if magic != VIDEO_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {VIDEO_MAGIC!r}")
    if min(t, h, w) < 1:
        raise FormatError(f"{path}: non-positive dimensions {t} x {h} x {w}")
    expected = _VIDEO_HEADER.size + 4 * t * h * w
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload truncated, expected {expected} bytes, got {len(raw)}"
        )
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    samples = np.frombuffer(raw, dtype="<f4", offset=_VIDEO_HEADER.size)
    if not np.isfinite(samples).all():
        raise NonFiniteDataError(f"{path}: payload contains non-finite samples")
    return VideoTensor(samples.reshape(t, h, w), fps)


# ---------------------------------------------------------------------------
# CSV trace format


def write_trace(trace: Trace, path) -> None:
    """Write ``trace`` as CSV text: ``fps,<value>`` then frame_index,value rows."""
    lines = [f"fps,{trace.fps:.9g}"]
    lines.extend(f"{i},{v:.9g}" for i, v in enumerate(trace.data))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path) -> Trace:
    """Read a CSV trace written by :func:`write_trace`."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TruncatedFileError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 2 or head[0] != "fps":
        raise FormatError(f"{path}:1: expected header 'fps,<value>', got {lines[0]!r}")
    try:
        fps = float(head[1])
    except ValueError:
        raise FormatError(f"{path}:1: malformed fps value {head[1]!r}") from None
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'frame_index,value', got {line!r}")
        try:
            idx = int(fields[0])
            val = float(fields[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed row {line!r}") from None
        if idx != len(values):
            raise FormatError(f"{path}:{lineno}: frame index {idx}, expected {len(values)}")
        if not np.isfinite(val):
            raise NonFiniteDataError(f"{path}:{lineno}: value {fields[1]!r} overflows float")
        values.append(val)
    if not values:
        raise FormatError(f"{path}: trace body is empty (need at least one sample)")
    return Trace(np.asarray(values, dtype=np.float32), fps)


# ---------------------------------------------------------------------------
# CSV spike-train format


def write_spikes(spikes: SpikeTrain, path) -> None:
    lines = [f"total_frames,{spikes.total_frames}"]
    lines.extend(str(int(i)) for i in spikes.indices)
    Path(path).write_text("\n".join(lines) + "\n")


def read_spikes(path) -> SpikeTrain:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TruncatedFileError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 2 or head[0] != "total_frames":
        raise FormatError(f"{path}:1: expected header 'total_frames,<T>', got {lines[0]!r}")
    try:
        total = int(head[1])
    except ValueError:
        raise FormatError(f"{path}:1: malformed total_frames {head[1]!r}") from None
    indices = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            indices.append(int(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed frame index {line!r}") from None
    return SpikeTrain(np.asarray(indices, dtype=np.int64), total)


# ---------------------------------------------------------------------------
# Slicing


def slice_roi(video: VideoTensor, roi: RoiRect) -> VideoTensor:
    """Copy the ``roi`` rectangle out of every frame."""
    roi.check_inside(video.height, video.width)
    ys, xs = roi.slices
    return VideoTensor(video.data[:, ys, xs].copy(), video.fps)


def slice_frames(video: VideoTensor, start: int, end: int) -> VideoTensor:
    """Copy the half-open frame range ``[start, end)``."""
    if not 0 <= start < end <= video.frames:
        raise FormatError(
            f"frame range [{start}, {end}) invalid for a {video.frames}-frame video"
        )
    return VideoTensor(video.data[start:end].copy(), video.fps)
