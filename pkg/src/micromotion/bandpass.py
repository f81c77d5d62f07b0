"""Zero-phase temporal bandpass filtering of traces and videos.

The filter applies the Butterworth *magnitude* response in the frequency
domain: forward real FFT, multiply each bin by

    H(f) = [1 + (f_lo/f)^(2n)]^(-1/2) * [1 + (f/f_hi)^(2n)]^(-1/2)

with H(0) = 0, inverse FFT.  This pins the half-power points exactly at
``f_lo`` and ``f_hi`` and introduces no group delay, so filtered output
stays time-aligned with the fluorescence channel.  Filtering is offline
(whole trace at once) and independent per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .tensor_io import Trace, VideoTensor
from .validation import check_video

# pixel rows are filtered in blocks of this many samples to bound memory
_BLOCK_SAMPLES = 8_000_000


@dataclass(frozen=True)
class BandpassSpec:
    """Passband edges in Hz, Butterworth order per edge, and sample rate."""

    f_lo: float = 2.0
    f_hi: float = 15.0
    order: int = 4
    fps: float = 50.0

    def __post_init__(self):
        if not 0 < self.f_lo < self.f_hi < self.fps / 2:
            raise ValueError(
                f"need 0 < f_lo < f_hi < fps/2, got {self.f_lo}, {self.f_hi} "
                f"at fps {self.fps}"
            )
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")


def magnitude_response(spec: BandpassSpec, f) -> np.ndarray | float:
    """Filter gain at frequency ``f`` (Hz, scalar or array), in [0, fps/2]."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0) or np.any(f > spec.fps / 2):
        raise ValueError(f"frequency out of [0, fps/2] = [0, {spec.fps / 2}]")
    n2 = 2 * spec.order
    safe = np.where(f > 0, f, 1.0)
    hp = (1.0 + (spec.f_lo / safe) ** n2) ** -0.5
    lp = (1.0 + (f / spec.f_hi) ** n2) ** -0.5
    gain = np.where(f > 0, hp * lp, 0.0)
    return float(gain) if gain.ndim == 0 else gain


def _response_bins(spec: BandpassSpec, t: int) -> np.ndarray:
    # rfft bin k sits at k*fps/T <= fps/2, so the response is always defined
    return magnitude_response(spec, np.fft.rfftfreq(t, d=1.0 / spec.fps))


def bandpass_trace(trace: Trace, spec: BandpassSpec) -> Trace:
    """Zero-phase bandpass of a single trace; the DC bin is zeroed."""
    if trace.frames < 2:
        raise ValueError("bandpass requires at least 2 samples")
    if not np.isclose(trace.fps, spec.fps):
        raise ValueError(f"trace fps {trace.fps} does not match spec fps {spec.fps}")
    x = trace.data.astype(np.float64)
    y = np.fft.irfft(np.fft.rfft(x) * _response_bins(spec, trace.frames), n=trace.frames)
    return Trace(y.astype(np.float32), trace.fps)


def bandpass_video(video: VideoTensor, spec: BandpassSpec) -> VideoTensor:
    """Apply :func:`bandpass_trace` independently to every pixel trace."""
    if video.frames < 2:
        raise ValueError("bandpass requires at least 2 frames")
    if not np.isclose(video.fps, spec.fps):
        raise ValueError(f"video fps {video.fps} does not match spec fps {spec.fps}")
    t, h, w = video.data.shape
    gain = _response_bins(spec, t)[:, None]
    out = np.empty((t, h, w), dtype=np.float32)
    rows_per_block = max(1, _BLOCK_SAMPLES // (t * w))
    for y0 in range(0, h, rows_per_block):
        block = video.data[:, y0 : y0 + rows_per_block, :].astype(np.float64)
        hb = block.shape[1]
        flat = block.reshape(t, hb * w)
        filt = np.fft.irfft(np.fft.rfft(flat, axis=0) * gain, n=t, axis=0)
        out[:, y0 : y0 + rows_per_block, :] = filt.reshape(t, hb, w).astype(np.float32)
    return VideoTensor(out, video.fps)


class TemporalBandpass(BaseEstimator, TransformerMixin):
    """Stateless transformer wrapping :func:`bandpass_video`.

    The sample rate is taken from the input, so the same instance can be
    reused across recordings.
    """

    def __init__(self, f_lo: float = 2.0, f_hi: float = 15.0, order: int = 4):
        self.f_lo = f_lo
        self.f_hi = f_hi
        self.order = order

    def _spec(self, fps: float) -> BandpassSpec:
        return BandpassSpec(f_lo=self.f_lo, f_hi=self.f_hi, order=self.order, fps=fps)

    def fit(self, X, y=None):
        self._spec(X.fps)  # validates the band against this sample rate
        return self

    def transform(self, X):
        if isinstance(X, Trace):
            return bandpass_trace(X, self._spec(X.fps))
        return bandpass_video(check_video(X), self._spec(X.fps))
