"""Matched filtering: spike-triggered templates and sliding correlation.

The template is extracted per pixel by averaging windows of the filtered
transmission video centered on fluorescence spikes.  "Deconvolution" with
the template is implemented as the matched filter, i.e. a sliding
correlation of each pixel trace with that pixel's own template:

    out(t) = sum_l  template(l) * signal(t + l - (L-1)/2)

with zero padding at the edges, so the output keeps length T and peaks
where the template occurs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .tensor_io import RoiRect, SpikeTrain, Trace, VideoTensor
from .validation import check_same_grid, check_video


@dataclass(frozen=True)
class SpikeDetectConfig:
    threshold_sigma: float = 4.0
    refractory_frames: int = 25

    def __post_init__(self):
        if self.threshold_sigma <= 0:
            raise ValueError("threshold_sigma must be positive")
        if self.refractory_frames < 0:
            raise ValueError("refractory_frames must be >= 0")


@dataclass(frozen=True, eq=False)
class TemplateTensor:
    """Per-pixel spike-triggered average: an L x H x W stack, L odd.

    ``spike_count`` records how many events entered the average.
    """

    data: np.ndarray
    fps: float
    spike_count: int

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] % 2 == 0:
            raise ValueError(f"template must be L x H x W with L odd, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("template samples must be finite")
        if self.spike_count < 1:
            raise ValueError("spike_count must be >= 1")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "fps", float(np.float32(self.fps)))
        object.__setattr__(self, "spike_count", int(self.spike_count))

    @property
    def window(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def detect_spikes(fluor: Trace, cfg: SpikeDetectConfig = SpikeDetectConfig()) -> SpikeTrain:
    """Threshold-and-refractory peak picking on the z-scored trace.

    Interior local maxima above ``threshold_sigma`` are kept greedily in
    descending amplitude; a candidate within ``refractory_frames`` of an
    already kept peak is discarded.
    """
    if fluor.frames < 3:
        raise ValueError("spike detection requires at least 3 samples")
    x = fluor.data.astype(np.float64)
    std = x.std()
    if std == 0:
        raise ValueError("cannot detect spikes on a zero-variance trace")
    z = (x - x.mean()) / std

    interior = z[1:-1]
    is_peak = (interior >= z[:-2]) & (interior >= z[2:]) & (interior > cfg.threshold_sigma)
    candidates = np.flatnonzero(is_peak) + 1
    # stable sort keeps the earlier index first among equal amplitudes
    order = candidates[np.argsort(-z[candidates], kind="stable")]
    kept: list[int] = []
    for idx in order:
        if all(abs(idx - k) > cfg.refractory_frames for k in kept):
            kept.append(int(idx))
    return SpikeTrain(np.sort(np.asarray(kept, dtype=np.int64)), fluor.frames)


def extract_template(filtered: VideoTensor, spikes: SpikeTrain, window: int) -> TemplateTensor:
    """Average the length-``window`` clip centered on each usable spike.

    Spikes whose window would leave the recording are skipped; at least
    one usable spike is required.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive count, got {window}")
    if spikes.total_frames != filtered.frames:
        raise ValueError("spike train and video disagree on frame count")
    half = (window - 1) // 2
    usable = [int(s) for s in spikes.indices if s - half >= 0 and s + half < filtered.frames]
    if not usable:
        raise ValueError("no spike has a full template window inside the recording")
    acc = np.zeros((window, filtered.height, filtered.width), dtype=np.float64)
    for s in usable:
        acc += filtered.data[s - half : s + half + 1]
    acc /= len(usable)
    return TemplateTensor(acc.astype(np.float32), filtered.fps, len(usable))


def matched_filter(filtered: VideoTensor, template: TemplateTensor) -> VideoTensor:
    """Correlate each pixel trace with its own template (zero padded)."""
    check_same_grid(filtered, template)
    t, h, w = filtered.data.shape
    window = template.window
    if window > t:
        raise ValueError(f"template window {window} exceeds video length {t}")
    half = (window - 1) // 2
    tpl = template.data.astype(np.float64)
    out = np.empty((t, h, w), dtype=np.float32)
    padded = np.zeros((t + window - 1, w), dtype=np.float64)
    for y in range(h):
        padded[half : half + t] = filtered.data[:, y, :]
        windows = sliding_window_view(padded, window, axis=0)  # (t, w, window)
        out[:, y, :] = np.einsum("twl,lw->tw", windows, tpl[:, y, :]).astype(np.float32)
    return VideoTensor(out, filtered.fps)


def prediction_trace(pred: VideoTensor, roi: RoiRect, square: bool = False) -> Trace:
    """Sum the prediction over ``roi`` per frame; optionally square the sum.

    Squaring happens after summation, so bipolar per-pixel responses can
    cancel before the trace is made unipolar.
    """
    roi.check_inside(pred.height, pred.width)
    ys, xs = roi.slices
    trace = pred.data[:, ys, xs].astype(np.float64).sum(axis=(1, 2))
    if square:
        trace = trace * trace
    return Trace(trace.astype(np.float32), pred.fps)


class MatchedFilterModel(BaseEstimator):
    """Estimator facade: fit extracts the template, predict correlates.

    ``fit`` accepts either ground-truth spike times (a :class:`SpikeTrain`)
    or a fluorescence :class:`Trace`, in which case spikes are detected
    with the configured threshold and refractory period.
    """

    def __init__(self, window: int = 51, threshold_sigma: float = 4.0,
                 refractory_frames: int = 25):
        self.window = window
        self.threshold_sigma = threshold_sigma
        self.refractory_frames = refractory_frames

    def fit(self, X, y):
        X = check_video(X)
        if isinstance(y, Trace):
            cfg = SpikeDetectConfig(self.threshold_sigma, self.refractory_frames)
            y = detect_spikes(y, cfg)
        elif not isinstance(y, SpikeTrain):
            raise TypeError(f"y must be a Trace or SpikeTrain, got {type(y).__name__}")
        self.template_ = extract_template(X, y, self.window)
        return self

    def predict(self, X) -> VideoTensor:
        if not hasattr(self, "template_"):
            raise NotFittedError("MatchedFilterModel must be fitted before predict")
        return matched_filter(check_video(X), self.template_)
