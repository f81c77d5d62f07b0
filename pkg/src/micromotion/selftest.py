"""Built-in oracle checks for the ``selftest`` subcommand.

Each check recomputes an expected value by an independent route (byte
layout by hand, brute-force loops, unrolled recurrences) and compares the
library against it.  This is a fast smoke screen, not the full test
suite.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np


def _check_video_bytes():
    from .tensor_io import VideoTensor, read_video, write_video

    video = VideoTensor(np.zeros((1, 1, 1), dtype=np.float32), 50.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "one.mmv"
        write_video(video, path)
        raw = path.read_bytes()
        expected = (b"MMV1" + b"\x01\x00\x00\x00" * 3
                    + b"\x00\x00\x48\x42" + b"\x00\x00\x00\x00")
        assert raw == expected, f"byte layout mismatch: {raw.hex()}"
        back = read_video(path)
        assert np.array_equal(back.data, video.data) and back.fps == video.fps


def _check_filter_response():
    from .bandpass import BandpassSpec, bandpass_trace, magnitude_response
    from .tensor_io import Trace

    spec = BandpassSpec(fps=50.0)
    half = magnitude_response(spec, 2.0)
    assert abs(half - 2 ** -0.5 * (1 + (2 / 15) ** 8) ** -0.5) < 1e-12
    t = 4096
    cycles = round(8.0 * t / 50.0)
    f = cycles * 50.0 / t
    x = np.sin(2 * np.pi * f * np.arange(t) / 50.0)
    y = bandpass_trace(Trace(x.astype(np.float32), 50.0), spec).data.astype(np.float64)
    gain = 2.0 * np.abs(y @ np.exp(-2j * np.pi * cycles * np.arange(t) / t)) / t
    assert abs(gain - magnitude_response(spec, f)) < 1e-3, f"gain {gain}"


def _check_conv_oracle():
    from .nn1d import Conv1DLayer, conv1d_forward

    rng = np.random.default_rng(7)
    k, c_in, c_out, d, t = 3, 2, 3, 2, 11
    layer = Conv1DLayer(rng.standard_normal((k, c_in, c_out)),
                        rng.standard_normal(c_out), dilation=d, activation="linear")
    x = rng.standard_normal((t, c_in))
    out = conv1d_forward(x, layer)
    oracle = np.zeros((t, c_out))
    for tt in range(t):
        for o in range(c_out):
            acc = layer.bias[o]
            for tap in range(k):
                src = tt + d * (tap - (k - 1) // 2)
                if 0 <= src < t:
                    for i in range(c_in):
                        acc += layer.weights[tap, i, o] * x[src, i]
            oracle[tt, o] = acc
    assert np.allclose(out, oracle, atol=1e-12), "conv disagrees with nested loops"


def _check_matched_oracle():
    from .matched import TemplateTensor, matched_filter
    from .tensor_io import VideoTensor

    rng = np.random.default_rng(3)
    t, window = 400, 51
    pulse = np.hanning(window)
    signal = 0.05 * rng.standard_normal(t)
    where = 173
    signal[where : where + window] += pulse
    video = VideoTensor(signal.astype(np.float32)[:, None, None], 50.0)
    template = TemplateTensor(pulse.astype(np.float32)[:, None, None], 50.0, 1)
    out = matched_filter(video, template).data[:, 0, 0]
    half = (window - 1) // 2
    sig32 = video.data[:, 0, 0].astype(np.float64)
    tpl32 = template.data[:, 0, 0].astype(np.float64)
    oracle = np.zeros(t)
    for tt in range(t):
        for tap in range(window):
            src = tt + tap - half
            if 0 <= src < t:
                oracle[tt] += tpl32[tap] * sig32[src]
    assert np.allclose(out, oracle, atol=1e-5)
    assert abs(int(np.argmax(out)) - (where + half)) <= 1


def _check_adam_unroll():
    from .nn1d import AdamState, adam_step

    p = np.array([1.0, -2.0])
    g1 = np.array([0.3, -0.1])
    g2 = np.array([-0.2, 0.4])
    state = AdamState.for_params([p])
    adam_step([p], [g1], state, lr=0.01)
    adam_step([p], [g2], state, lr=0.01)

    m = v = np.zeros(2)
    ref = np.array([1.0, -2.0])
    for t, g in ((1, g1), (2, g2)):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.max(np.abs(p - ref)) < 1e-12


def _check_score_oracle():
    from .evaluation import correlation_score
    from .tensor_io import Trace

    rng = np.random.default_rng(11)
    t = 96
    a = rng.standard_normal(t)
    b = rng.standard_normal(t)
    score = correlation_score(Trace(a.astype(np.float32), 1.0),
                              Trace(b.astype(np.float32), 1.0))
    a32 = a.astype(np.float32).astype(np.float64)
    b32 = b.astype(np.float32).astype(np.float64)
    az = (a32 - a32.mean()) / a32.std()
    bz = (b32 - b32.mean()) / b32.std()
    best = -np.inf
    for lag in range(-(t - 1), t):
        acc = sum(az[i] * bz[i + lag] for i in range(t) if 0 <= i + lag < t)
        best = max(best, acc / t)
    assert abs(score - best) < 1e-6


def _check_spike_refractory():
    from .matched import SpikeDetectConfig, detect_spikes
    from .tensor_io import Trace

    x = np.zeros(200, dtype=np.float32)
    x[50] = 8.0
    x[60] = 10.0
    spikes = detect_spikes(Trace(x, 50.0), SpikeDetectConfig(4.0, 25))
    assert list(spikes.indices) == [60], f"got {list(spikes.indices)}"


CHECKS = [
    ("mmv1 byte layout and round trip", _check_video_bytes),
    ("bandpass closed-form gain", _check_filter_response),
    ("conv layer vs nested-loop oracle", _check_conv_oracle),
    ("matched filter vs sliding-correlation oracle", _check_matched_oracle),
    ("adam vs hand-unrolled recurrence", _check_adam_unroll),
    ("correlation score vs all-lag oracle", _check_score_oracle),
    ("spike detection refractory rule", _check_spike_refractory),
]


def run() -> int:
    failures = 0
    for name, check in CHECKS:
        try:
            check()
        except Exception as exc:  # report and keep going
            failures += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"PASS {name}")
    print(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return 1 if failures else 0
