"""Deterministic generator of paired transmission/fluorescence recordings.

The generated scene is a static background of soft-edged elliptical cells
on a smooth random field.  A renewal-process spike train drives two
signals:

* transmission modulation ``I(x, t) = I0(x) + a * g(x) * k(t - s)`` per
  spike ``s`` inside each configured region, where ``g`` is the signed
  directional derivative of the background along the region's mean
  gradient direction (a sub-pixel membrane shift along a fixed direction
  changes intensity by the projected local gradient, the first-order
  Taylor model of true motion; pixels on opposite sides of an edge move
  in opposite directions) and ``k`` is a raised-cosine pulse of 200 ms;
* a global fluorescence trace, the sum over spikes of a Ca-transient
  kernel (linear 50 ms rise, exponential 100 ms decay) plus 1 percent
  Gaussian noise.

Shot noise is approximated per sample as zero-mean Gaussian with standard
deviation ``sqrt(I / full_well)``, valid for the >= 1e4 electron regime
the config guarantees.

All randomness comes from counter-based Philox streams keyed by
``(seed, stream, frame)``, so frame ranges can be generated in parallel
without changing the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox
from scipy import ndimage
from scipy.special import expit

from .tensor_io import FormatError, RoiRect, SpikeTrain, Trace, VideoTensor

MOTION_PULSE_S = 0.2  # raised-cosine motion pulse duration
CA_RISE_S = 0.05  # linear rise of the Ca-transient kernel
CA_DECAY_S = 0.10  # exponential decay constant of the Ca-transient kernel
FLUOR_NOISE_FRAC = 0.01  # fluorescence noise, fraction of single-transient peak

# default region amplitudes, calibrated once against the shot-noise floor
# of the default config (full well 1e5 -> sigma ~ 2.2e-3 per sample):
# strong gives per-pixel SNR well above 1, weak sits near the floor
STRONG_AMPLITUDE = 0.60
WEAK_AMPLITUDE = 0.03

_STREAM_SPIKES = 0
_STREAM_BACKGROUND = 1
_STREAM_FLUOR = 2
_STREAM_FRAME_NOISE = 3


def _rng(seed: int, stream: int, index: int = 0) -> Generator:
    """Counter-based generator for one (seed, stream, index) cell."""
    key = np.array([seed % 2**64, (stream << 48) + index], dtype=np.uint64)
    return Generator(Philox(key=key))


@dataclass(frozen=True)
class RegionSpec:
    """A labeled motion region: where, how strongly, and its taxonomy tag."""

    roi: RoiRect
    amplitude: float
    label: str

    def __post_init__(self):
        if self.label not in ("strong", "weak", "silent"):
            raise FormatError(f"unknown region label {self.label!r}")
        if self.amplitude < 0:
            raise FormatError("region amplitude must be >= 0")
        if self.label == "silent" and self.amplitude != 0:
            raise FormatError("silent regions must have amplitude 0")


def default_regions(height: int, width: int,
                    strong: float = STRONG_AMPLITUDE,
                    weak: float = WEAK_AMPLITUDE) -> tuple[RegionSpec, ...]:
    """Strong (center), weak (lower right), silent (upper left) quarter-size boxes."""
    if min(height, width) < 16:
        raise FormatError("default region layout needs a frame of at least 16 x 16")
    s = max(4, min(height, width) // 4)
    m = max(2, min(height, width) // 16)
    return (
        RegionSpec(RoiRect((width - s) // 2, (height - s) // 2, s, s), strong, "strong"),
        RegionSpec(RoiRect(width - s - m, height - s - m, s, s), weak, "weak"),
        RegionSpec(RoiRect(m, m, s, s), 0.0, "silent"),
    )


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 5000
    height: int = 256
    width: int = 256
    fps: float = 50.0
    seed: int = 0
    mean_spike_interval_s: float = 3.0
    refractory_s: float = 1.0
    full_well: float = 1e5
    regions: tuple[RegionSpec, ...] = field(default_factory=lambda: default_regions(256, 256))

    def __post_init__(self):
        if self.frames < 1 or self.height < 4 or self.width < 4:
            raise FormatError(f"bad dimensions {self.frames} x {self.height} x {self.width}")
        if self.fps <= 0:
            raise FormatError("fps must be positive")
        if not 0 <= self.refractory_s < self.mean_spike_interval_s:
            raise FormatError("need 0 <= refractory_s < mean_spike_interval_s")
        if not self.full_well > 0:
            raise FormatError("full_well must be positive (math.inf disables noise)")
        covered = np.zeros((self.height, self.width), dtype=bool)
        for region in self.regions:
            region.roi.check_inside(self.height, self.width)
            ys, xs = region.roi.slices
            if covered[ys, xs].any():
                raise FormatError(f"region {region.label!r} overlaps another region")
            covered[ys, xs] = True


@dataclass(frozen=True)
class SynthDataset:
    transmission: VideoTensor
    fluorescence_global: Trace
    spikes: SpikeTrain
    regions: tuple[RegionSpec, ...]

    def __post_init__(self):
        t = self.transmission.frames
        if self.fluorescence_global.frames != t or self.spikes.total_frames != t:
            raise FormatError("dataset components disagree on frame count")

    def region(self, label: str) -> RegionSpec:
        for r in self.regions:
            if r.label == label:
                return r
        raise KeyError(f"no region labeled {label!r}")


def gen_spike_train(config: SynthConfig) -> SpikeTrain:
    """Renewal process: refractory gap plus an exponential holding time.

    Inter-spike intervals are ``refractory_s + Exp(mean_spike_interval_s -
    refractory_s)`` seconds, accumulated from t=0 and quantized to frames.
    A recording too short for one spike yields an empty (valid) train.
    """
    rng = _rng(config.seed, _STREAM_SPIKES)
    exp_mean = config.mean_spike_interval_s - config.refractory_s
    t = 0.0
    frames = []
    while True:
        t += config.refractory_s + rng.exponential(exp_mean)
        frame = int(round(t * config.fps))
        if frame >= config.frames:
            break
        frames.append(frame)
    return SpikeTrain(np.asarray(frames, dtype=np.int64), config.frames)


def _motion_pulse(fps: float) -> np.ndarray:
    """Raised cosine over MOTION_PULSE_S seconds, sampled on frames; peak 1."""
    n = int(round(MOTION_PULSE_S * fps))
    tt = np.arange(n + 1) / fps
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * tt / MOTION_PULSE_S))


def _ca_kernel(length: int, fps: float) -> np.ndarray:
    """Ca transient sampled at frame midpoints; peak value 1 at the rise end."""
    tt = (np.arange(length) + 0.5) / fps
    return np.where(tt <= CA_RISE_S, tt / CA_RISE_S, np.exp(-(tt - CA_RISE_S) / CA_DECAY_S))


def _background(seed: int, height: int, width: int) -> np.ndarray:
    """Smooth random field plus soft-edged elliptical cells, scaled to [0.1, 0.9]."""
    rng = _rng(seed, _STREAM_BACKGROUND)
    coarse = rng.standard_normal((height // 8 + 2, width // 8 + 2))
    img = ndimage.zoom(coarse, 8.0, order=3)[:height, :width] * 0.4

    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    n_cells = max(3, (height * width) // 1200)
    lo_ax = max(2.0, min(height, width) / 16.0)
    hi_ax = max(3.0, min(height, width) / 5.0)
    for _ in range(n_cells):
        cx = rng.uniform(0, width)
        cy = rng.uniform(0, height)
        ax = rng.uniform(lo_ax, hi_ax)
        ay = rng.uniform(lo_ax, hi_ax)
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(0.5, 1.5)
        dx, dy = xx - cx, yy - cy
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / ax
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ay
        q = u * u + v * v
        img += amp * expit((1.0 - q) / 0.15)

    img -= img.min()
    peak = img.max()
    if peak > 0:
        img /= peak
    return 0.1 + 0.8 * img


def gen_dataset(config: SynthConfig) -> SynthDataset:
    """Generate the full paired dataset; a pure function of the config."""
    spikes = gen_spike_train(config)
    background = _background(config.seed, config.height, config.width)

    # per-pixel modulation gain: amplitude times the signed projection of
    # the local gradient onto the region's shift direction (its mean
    # gradient); zero outside the configured regions
    gy, gx = np.gradient(background)
    gain = np.zeros_like(background)
    for region in config.regions:
        ys, xs = region.roi.slices
        ux, uy = gx[ys, xs].sum(), gy[ys, xs].sum()
        norm = np.hypot(ux, uy)
        if norm == 0:
            ux, uy = 1.0, 0.0
        else:
            ux, uy = ux / norm, uy / norm
        gain[ys, xs] = region.amplitude * (ux * gx[ys, xs] + uy * gy[ys, xs])

    pulse = _motion_pulse(config.fps)
    spike_idx = spikes.indices
    noisy = math.isfinite(config.full_well)
    out = np.empty((config.frames, config.height, config.width), dtype=np.float32)
    for t in range(config.frames):
        lo = np.searchsorted(spike_idx, t - (len(pulse) - 1))
        hi = np.searchsorted(spike_idx, t, side="right")
        ksum = float(pulse[t - spike_idx[lo:hi]].sum())
        frame = background + ksum * gain if ksum else background
        if noisy:
            sigma = np.sqrt(np.maximum(frame, 0.0) / config.full_well)
            frame = frame + sigma * _rng(config.seed, _STREAM_FRAME_NOISE, t).standard_normal(
                (config.height, config.width)
            )
        out[t] = frame

    fluor = np.zeros(config.frames, dtype=np.float64)
    for s in spike_idx:
        fluor[s:] += _ca_kernel(config.frames - s, config.fps)
    fluor += FLUOR_NOISE_FRAC * _rng(config.seed, _STREAM_FLUOR).standard_normal(config.frames)

    return SynthDataset(
        transmission=VideoTensor(out, config.fps),
        fluorescence_global=Trace(fluor.astype(np.float32), config.fps),
        spikes=spikes,
        regions=tuple(config.regions),
    )


# ---------------------------------------------------------------------------
# Region list CSV: label,x0,y0,w,h,amplitude


def write_regions(regions, path) -> None:
    lines = ["label,x0,y0,w,h,amplitude"]
    for r in regions:
        lines.append(f"{r.label},{r.roi.x0},{r.roi.y0},{r.roi.w},{r.roi.h},{r.amplitude:.9g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_regions(path) -> tuple[RegionSpec, ...]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "label,x0,y0,w,h,amplitude":
        raise FormatError(f"{path}: missing regions header")
    regions = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        label, x0, y0, w, h, amp = fields
        try:
            roi = RoiRect(int(x0), int(y0), int(w), int(h))
            regions.append(RegionSpec(roi, float(amp), label))
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return tuple(regions)
