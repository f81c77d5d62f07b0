"""Correlation scoring, per-pixel score maps, and method comparison.

The score between a prediction and the target is the maximum over all
lags of their cross-correlation after z-scoring, with the sum taken over
the overlap and divided by the full trace length T.  Divisor-T
normalization penalizes large lags and makes identical traces score
exactly 1 at lag zero; Cauchy-Schwarz bounds the score by 1.

Max-over-lags is upward biased on noise, so empirical null bands are
reported alongside scores: white noise recolored to the prediction's own
amplitude spectrum (phase-randomized surrogates) is scored against the
true target, and the min/max over seeded trials bracket what alignment-
free chance produces for that method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox
from scipy import fft as sfft
from scipy import signal

from .tensor_io import FormatError, Trace, VideoTensor


@dataclass(eq=False)
class CorrelationMap:
    """H x W per-pixel correlation scores plus provenance metadata."""

    scores: np.ndarray
    method: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"score map must be 2D, got shape {arr.shape}")
        if arr.size and (arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6):
            raise ValueError("correlation scores must lie in [-1, 1]")
        self.scores = arr


def _zscore64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    std = x.std()
    if std == 0:
        raise ValueError("zero-variance trace cannot be z-scored")
    return (x - x.mean()) / std


def zscore(trace: Trace) -> Trace:
    """Subtract the temporal mean, divide by the population standard deviation."""
    return Trace(_zscore64(trace.data).astype(np.float32), trace.fps)


def correlation_score(pred: Trace, target: Trace) -> float:
    """Max over all lags of the z-scored cross-correlation, divisor T."""
    if pred.frames != target.frames:
        raise ValueError(f"length mismatch: {pred.frames} vs {target.frames}")
    x = _zscore64(pred.data)
    y = _zscore64(target.data)
    # index i of the full correlation is lag tau = i - (T-1) of sum_t x(t) y(t+tau)
    c = signal.correlate(y, x, mode="full", method="auto") / pred.frames
    return float(c.max())


def correlation_map(pred: VideoTensor, target: Trace, method: str = "",
                    rows_per_block: int = 16) -> CorrelationMap:
    """Score every pixel trace against the target.

    Zero-variance pixels cannot be z-scored; they are assigned score 0 and
    flagged in ``meta["degenerate_mask"]`` rather than treated as errors,
    since background pixels are expected.
    """
    t, h, w = pred.data.shape
    if t != target.frames:
        raise ValueError(f"video has {t} frames but target has {target.frames}")
    y = _zscore64(target.data)
    n = sfft.next_fast_len(2 * t - 1)
    yf = np.fft.rfft(y, n)
    scores = np.zeros((h, w), dtype=np.float32)
    degenerate = np.zeros((h, w), dtype=bool)
    for y0 in range(0, h, rows_per_block):
        block = pred.data[:, y0 : y0 + rows_per_block, :].astype(np.float64)
        hb = block.shape[1]
        flat = block.reshape(t, hb * w)
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        ok = std > 0
        flat = np.where(ok, (flat - mean) / np.where(ok, std, 1.0), 0.0)
        xf = np.fft.rfft(flat, n, axis=0)
        circ = np.fft.irfft(np.conj(xf) * yf[:, None], n, axis=0)
        # circular index m maps to lag m for m < t and to lag m - n at the top
        peak = np.maximum(circ[:t].max(axis=0), circ[n - t + 1 :].max(axis=0)) / t
        peak = np.where(ok, peak, 0.0)
        scores[y0 : y0 + rows_per_block] = peak.reshape(hb, w).astype(np.float32)
        degenerate[y0 : y0 + rows_per_block] = (~ok).reshape(hb, w)
    meta = {"degenerate_pixels": int(degenerate.sum()), "degenerate_mask": degenerate}
    return CorrelationMap(scores, method=method, meta=meta)


# ---------------------------------------------------------------------------
# null bands


def _trial_rng(seed: int, trial: int) -> Generator:
    return Generator(Philox(key=np.array([seed % 2**64, trial], dtype=np.uint64)))


def white_noise_null(frames: int, trials: int = 100, seed: int = 0) -> np.ndarray:
    """Scores of independent white-noise pairs: the raw chance level."""
    scores = np.empty(trials)
    for i in range(trials):
        rng = _trial_rng(seed, i)
        a = Trace(rng.standard_normal(frames).astype(np.float32), 1.0)
        b = Trace(rng.standard_normal(frames).astype(np.float32), 1.0)
        scores[i] = correlation_score(a, b)
    return scores


def null_band(pred: Trace, target: Trace, trials: int = 50, seed: int = 0) -> tuple[float, float]:
    """Chance-score band for this prediction against this target.

    Each trial replaces the prediction by white noise recolored to the
    prediction's amplitude spectrum (a phase-randomized surrogate), which
    destroys any temporal alignment with the target while keeping the
    prediction's bandwidth, then scores it.  Returns (min, max) over the
    seeded trials.
    """
    x = _zscore64(pred.data)
    y = _zscore64(target.data)
    t = x.size
    mag = np.abs(np.fft.rfft(x))
    scores = np.empty(trials)
    for i in range(trials):
        rng = _trial_rng(seed, i)
        phase = rng.uniform(0.0, 2.0 * np.pi, mag.size)
        phase[0] = 0.0
        if t % 2 == 0:
            phase[-1] = rng.integers(0, 2) * np.pi
        surrogate = np.fft.irfft(mag * np.exp(1j * phase), n=t)
        std = surrogate.std()
        if std == 0:  # degenerate spectrum (e.g. pure DC); chance level is 0
            scores[i] = 0.0
            continue
        surrogate = (surrogate - surrogate.mean()) / std
        c = signal.correlate(y, surrogate, mode="full", method="auto") / t
        scores[i] = c.max()
    return float(scores.min()), float(scores.max())


# ---------------------------------------------------------------------------
# method comparison


@dataclass(frozen=True)
class MethodScore:
    method: str
    roi_label: str
    score: float
    null_lo: float
    null_hi: float

    @property
    def above_null(self) -> bool:
        return self.score > self.null_hi


@dataclass(eq=False)
class ComparisonReport:
    scores: list[MethodScore]
    traces: dict[tuple[str, str], Trace]
    maps: dict[str, CorrelationMap]
    target: Trace

    def score_of(self, method: str, roi_label: str) -> MethodScore:
        for s in self.scores:
            if s.method == method and s.roi_label == roi_label:
                return s
        raise KeyError(f"no score for ({method}, {roi_label})")

    def ranking_table(self) -> str:
        lines = [f"{'roi':<10} {'method':<10} {'score':>8} {'null_lo':>8} {'null_hi':>8}  verdict"]
        for label in sorted({s.roi_label for s in self.scores}):
            rows = sorted((s for s in self.scores if s.roi_label == label),
                          key=lambda s: -s.score)
            for s in rows:
                verdict = "above-null" if s.above_null else "within-null"
                lines.append(f"{s.roi_label:<10} {s.method:<10} {s.score:8.4f} "
                             f"{s.null_lo:8.4f} {s.null_hi:8.4f}  {verdict}")
        return "\n".join(lines) + "\n"


def compare_methods(target: Trace, regions, pixelwise: dict, regional: dict = None,
                    squared=("bandpass", "matched"), null_trials: int = 50,
                    null_seed: int = 0, with_maps: bool = True) -> ComparisonReport:
    """Score every method on every region of interest.

    ``pixelwise`` maps method name to a per-pixel prediction video; its
    ROI trace is the frame-wise sum over the region, squared afterwards
    for methods listed in ``squared`` (the filtering approaches produce
    bipolar output).  ``regional`` maps method name to per-region traces
    from region-bound models.  Each (method, roi) score is reported with
    its surrogate null band.
    """
    from .matched import prediction_trace  # local import to avoid a cycle

    regional = regional or {}
    scores: list[MethodScore] = []
    traces: dict[tuple[str, str], Trace] = {}
    maps: dict[str, CorrelationMap] = {}

    for method, video in pixelwise.items():
        if video.frames != target.frames:
            raise ValueError(f"method {method!r} prediction length mismatch")
        if with_maps:
            maps[method] = correlation_map(video, target, method=method)
        for region in regions:
            trace = prediction_trace(video, region.roi, square=method in squared)
            traces[(method, region.label)] = trace
            lo, hi = null_band(trace, target, trials=null_trials, seed=null_seed)
            scores.append(MethodScore(method, region.label,
                                      correlation_score(trace, target), lo, hi))

    for method, per_region in regional.items():
        for region in regions:
            if region.label not in per_region:
                raise ValueError(f"method {method!r} has no trace for region "
                                 f"{region.label!r}")
            trace = per_region[region.label]
            traces[(method, region.label)] = trace
            lo, hi = null_band(trace, target, trials=null_trials, seed=null_seed)
            scores.append(MethodScore(method, region.label,
                                      correlation_score(trace, target), lo, hi))

    return ComparisonReport(scores=scores, traces=traces, maps=maps, target=target)


# ---------------------------------------------------------------------------
# map export: 16-bit PGM for viewing, CSV for exact values


def export_map_pgm(scores, path, lo: float = -1.0, hi: float = 1.0) -> None:
    """Write a 16-bit binary PGM (plus an exact CSV next to it).

    Values map linearly, ``lo -> 0`` and ``hi -> 65535``, quantized with
    floor and clipped; samples are big-endian per the PGM standard.  The
    CSV carries the unquantized values with 9 significant digits.
    """
    if isinstance(scores, CorrelationMap):
        scores = scores.scores
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("map must be 2D")
    h, w = arr.shape
    levels = np.clip(np.floor((arr - lo) / (hi - lo) * 65535.0), 0, 65535)
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(levels.astype(">u2").tobytes())
    csv_lines = [",".join(f"{v:.9g}" for v in row) for row in arr]
    path.with_suffix(".csv").write_text("\n".join(csv_lines) + "\n")


def read_map_csv(path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: malformed row") from None
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FormatError(f"{path}: empty or ragged map")
    return np.asarray(rows, dtype=np.float64)
