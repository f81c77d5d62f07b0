"""Input validation helpers shared by the estimator classes."""

from __future__ import annotations

import numpy as np

from .tensor_io import Trace, VideoTensor


def check_video(x, name: str = "X") -> VideoTensor:
    if not isinstance(x, VideoTensor):
        raise TypeError(f"{name} must be a VideoTensor, got {type(x).__name__}")
    return x


def check_trace(x, name: str = "y") -> Trace:
    if not isinstance(x, Trace):
        raise TypeError(f"{name} must be a Trace, got {type(x).__name__}")
    return x


def check_same_frames(video: VideoTensor, trace: Trace) -> None:
    if video.frames != trace.frames:
        raise ValueError(
            f"video has {video.frames} frames but trace has {trace.frames}"
        )
    if not np.isclose(video.fps, trace.fps):
        raise ValueError(f"frame rates differ: {video.fps} vs {trace.fps}")


def check_same_grid(a: VideoTensor, b, name: str = "template") -> None:
    if a.height != b.height or a.width != b.width:
        raise ValueError(
            f"{name} grid {b.height} x {b.width} does not match video "
            f"{a.height} x {a.width}"
        )
