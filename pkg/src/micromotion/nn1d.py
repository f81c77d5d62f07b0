"""Dilated 1D convolutional network with hand-written backpropagation.

The fixed 22-layer architecture maps a single-pixel time series to a
fluorescence prediction of the same length: sixteen width-3 convolutions
with 8 filters, four more with dilations 2, 4, 8, 16, a width-1 ReLU
layer condensing to 3 channels, and a final width-1 linear layer down to
one channel.  Same-padding everywhere preserves the temporal length, so
the network is a cross-encoder from transmission to fluorescence.

Everything here operates on plain NumPy arrays shaped (batch, time,
channels); forward, backward and the Adam update are written out
explicitly so gradients can be verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .tensor_io import Trace, VideoTensor
from .validation import check_same_frames, check_trace, check_video

# (kernel, in_channels, out_channels, dilation, activation) per layer
ARCHITECTURE_1D = (
    [(3, 1, 8, 1, "relu")]
    + [(3, 8, 8, 1, "relu")] * 15
    + [(3, 8, 8, 2, "relu"), (3, 8, 8, 4, "relu"), (3, 8, 8, 8, "relu"), (3, 8, 8, 16, "relu")]
    + [(1, 8, 3, 1, "relu"), (1, 3, 1, 1, "linear")]
)

_STREAM_INIT = 0
_STREAM_SHUFFLE = 1


def _philox(seed: int, stream: int) -> Generator:
    return Generator(Philox(key=np.array([seed % 2**64, stream], dtype=np.uint64)))


@dataclass(eq=False)
class Conv1DLayer:
    """One same-padded 1D convolution: weights (k, c_in, c_out), bias (c_out,)."""

    weights: np.ndarray
    bias: np.ndarray
    dilation: int = 1
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 3 or self.weights.shape[0] % 2 == 0:
            raise ValueError(f"weights must be (odd k, c_in, c_out), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[2],):
            raise ValueError("bias length must equal out_channels")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def halfwidth(self) -> int:
        """Temporal reach to each side: dilation * (k - 1) / 2."""
        return self.dilation * (self.kernel_size - 1) // 2


def glorot_uniform(fan_in: int, fan_out: int, count: int, rng: Generator) -> np.ndarray:
    """Uniform draws on +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be positive")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=count)


@dataclass(eq=False)
class Network1D:
    """The fixed 22-layer stack; construction checks the architecture."""

    layers: list[Conv1DLayer] = field(default_factory=list)

    def __post_init__(self):
        spec = [(l.kernel_size, l.in_channels, l.out_channels, l.dilation, l.activation)
                for l in self.layers]
        if spec != ARCHITECTURE_1D:
            raise ValueError("layer list does not realize the fixed 22-layer architecture")

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    @property
    def receptive_halfwidth(self) -> int:
        """Frames to each side of t that can influence output frame t."""
        return sum(l.halfwidth for l in self.layers)

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.bias)
        return params


def _init_layers(arch, seed: int, dtype) -> list[Conv1DLayer]:
    rng = _philox(seed, _STREAM_INIT)
    layers = []
    for k, c_in, c_out, dilation, activation in arch:
        w = glorot_uniform(k * c_in, k * c_out, k * c_in * c_out, rng)
        layers.append(Conv1DLayer(
            weights=w.reshape(k, c_in, c_out).astype(dtype),
            bias=np.zeros(c_out, dtype=dtype),
            dilation=dilation,
            activation=activation,
        ))
    return layers


def build_network1d(seed: int = 0, dtype=np.float32) -> Network1D:
    """Glorot-uniform initialized network; biases zero; deterministic in seed."""
    return Network1D(_init_layers(ARCHITECTURE_1D, seed, dtype))


# ---------------------------------------------------------------------------
# forward / backward on (batch, time, channels) arrays


def _conv_pre(x: np.ndarray, layer: Conv1DLayer) -> np.ndarray:
    """Pre-activation: bias + sum_l x(t + d*(l - (k-1)/2)) @ W[l], zero padded."""
    b, t, _ = x.shape
    w = layer.weights
    k, center = layer.kernel_size, (layer.kernel_size - 1) // 2
    pre = np.empty((b, t, layer.out_channels), dtype=x.dtype)
    pre[:] = layer.bias
    for tap in range(k):
        off = layer.dilation * (tap - center)
        if off >= t or -off >= t:
            continue
        if off >= 0:
            pre[:, : t - off, :] += x[:, off:, :] @ w[tap]
        else:
            pre[:, -off:, :] += x[:, : t + off, :] @ w[tap]
    return pre


def _apply_activation(pre: np.ndarray, layer: Conv1DLayer) -> np.ndarray:
    if layer.activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def conv1d_forward(x: np.ndarray, layer: Conv1DLayer) -> np.ndarray:
    """One layer on a (T, c_in) array (or batched (B, T, c_in)); length kept."""
    x = np.asarray(x, dtype=layer.weights.dtype)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != layer.in_channels:
        raise ValueError(
            f"input shape {x.shape} does not match {layer.in_channels} input channels"
        )
    out = _apply_activation(_conv_pre(x, layer), layer)
    return out[0] if squeeze else out


def _layers_of(net) -> list[Conv1DLayer]:
    return net.layers if isinstance(net, Network1D) else list(net)


def _forward_acts(layers, x: np.ndarray) -> list[np.ndarray]:
    """All activations [input, out_1, ..., out_n]; ReLU masks recoverable as out > 0."""
    acts = [x]
    for layer in layers:
        acts.append(_apply_activation(_conv_pre(acts[-1], layer), layer))
    return acts


def forward(net, trace: Trace | np.ndarray) -> Trace | np.ndarray:
    """Run the full stack on one trace; output has the input's length."""
    layers = _layers_of(net)
    if isinstance(trace, Trace):
        x = trace.data.astype(layers[0].weights.dtype)[None, :, None]
        y = _forward_acts(layers, x)[-1]
        return Trace(y[0, :, 0].astype(np.float32), trace.fps)
    x = np.asarray(trace, dtype=layers[0].weights.dtype)[None, :, None]
    return _forward_acts(layers, x)[-1][0, :, 0]


def _conv_backward(x: np.ndarray, g_pre: np.ndarray, layer: Conv1DLayer):
    """Gradients of the pre-activation conv: (dW, db, dx)."""
    b, t, _ = x.shape
    w = layer.weights
    k, center = layer.kernel_size, (layer.kernel_size - 1) // 2
    db = g_pre.sum(axis=(0, 1))
    dw = np.zeros_like(w)
    dx = np.zeros_like(x)
    for tap in range(k):
        off = layer.dilation * (tap - center)
        if off >= t or -off >= t:
            continue
        if off >= 0:
            xs, gs, dxs = x[:, off:, :], g_pre[:, : t - off, :], dx[:, off:, :]
        else:
            xs, gs, dxs = x[:, : t + off, :], g_pre[:, -off:, :], dx[:, : t + off, :]
        dw[tap] = np.tensordot(xs, gs, axes=([0, 1], [0, 1]))
        dxs += gs @ w[tap].T
    return dw, db, dx


def _backward_acts(layers, acts, g_out: np.ndarray):
    """Reverse-mode pass from cached activations.

    Returns per-layer (dW, db) gradients plus the input gradient.  The
    ReLU subgradient at exactly 0 is taken as 0, so the mask is simply
    output > 0.
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    g = g_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        g_pre = g * (acts[i + 1] > 0) if layer.activation == "relu" else g
        dw, db, g = _conv_backward(acts[i], g_pre, layer)
        grads[i] = (dw, db)
    return grads, g


def backward(net, trace: np.ndarray, upstream: np.ndarray):
    """Forward with caching, then reverse-mode gradients.

    ``trace`` is a length-T input, ``upstream`` the length-T gradient of
    the loss with respect to the network output.  Returns the per-layer
    (dW, db) list and the gradient with respect to the input.
    """
    layers = _layers_of(net)
    dtype = layers[0].weights.dtype
    x = np.asarray(trace, dtype=dtype)[None, :, None]
    g = np.asarray(upstream, dtype=dtype)[None, :, None]
    acts = _forward_acts(layers, x)
    grads, dx = _backward_acts(layers, acts, g)
    return grads, dx[0, :, 0]


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to the prediction."""
    p = pred.data if isinstance(pred, Trace) else np.asarray(pred)
    y = target.data if isinstance(target, Trace) else np.asarray(target)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    diff = p.astype(np.float64) - y.astype(np.float64)
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


# ---------------------------------------------------------------------------
# Adam


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators mirroring a parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, in place, no weight decay."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = state.beta1 * m + (1.0 - state.beta1) * g
        v[...] = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig1D:
    learning_rate: float = 1e-3
    epochs: int = 3
    batch_pixels: int = 64
    seed: int = 0
    weight_decay: float = 0.0  # fixed; training uses none

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_pixels < 1:
            raise ValueError("epochs and batch_pixels must be >= 1")
        if self.weight_decay != 0.0:
            raise ValueError("weight decay is fixed at zero")


def zscore_pixels(video: VideoTensor, dtype=np.float32) -> np.ndarray:
    """Per-pixel z-scored traces, shaped (pixels, T), row-major pixel order.

    Zero-variance pixels cannot be normalized and are mapped to all-zero
    rows, matching how degenerate pixels are treated downstream.
    """
    t = video.frames
    x = video.data.reshape(t, -1).T.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    x -= mean
    np.divide(x, std, out=x, where=std > 0)
    x[(std == 0)[:, 0]] = 0.0
    return x.astype(dtype)


def _zscore_target(target: Trace, dtype) -> np.ndarray:
    y = target.data.astype(np.float64)
    std = y.std()
    if std == 0:
        raise ValueError("target trace has zero variance")
    return ((y - y.mean()) / std).astype(dtype)


def train_1d(filtered_video: VideoTensor, target: Trace, cfg: TrainConfig1D = TrainConfig1D(),
             dtype=np.float32):
    """Train the 22-layer network to map pixel traces to the global target.

    Every pixel of the (bandpassed) video is one training sample; the
    z-scored global fluorescence is the shared regression target.  Pixels
    are reshuffled each epoch from a seeded stream, batches are averaged
    over pixels and time, and updates use Adam without weight decay.
    Returns the trained network and the per-epoch mean loss.
    """
    check_same_frames(filtered_video, target)
    t = filtered_video.frames
    y = _zscore_target(target, dtype)
    x_all = zscore_pixels(filtered_video, dtype)
    n_pixels = x_all.shape[0]

    net = build_network1d(cfg.seed, dtype)
    params = net.parameters()
    state = AdamState.for_params(params)
    shuffle_rng = _philox(cfg.seed, _STREAM_SHUFFLE)

    epoch_losses = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n_pixels)
        loss_sum = 0.0
        for start in range(0, n_pixels, cfg.batch_pixels):
            batch = order[start : start + cfg.batch_pixels]
            xb = x_all[batch][:, :, None]
            acts = _forward_acts(net.layers, xb)
            diff = acts[-1][:, :, 0] - y[None, :]
            loss_sum += float(np.mean(diff.astype(np.float64) ** 2)) * len(batch)
            g_out = ((2.0 / diff.size) * diff).astype(dtype)[:, :, None]
            grads, _ = _backward_acts(net.layers, acts, g_out)
            flat = [g for pair in grads for g in pair]
            adam_step(params, flat, state, cfg.learning_rate)
        epoch_losses.append(loss_sum / n_pixels)
    return net, epoch_losses


def predict_1d(net: Network1D, filtered_video: VideoTensor, batch_pixels: int = 256) -> VideoTensor:
    """Per-pixel prediction video: the network applied to every z-scored trace."""
    layers = _layers_of(net)
    dtype = layers[0].weights.dtype
    t, h, w = filtered_video.data.shape
    x_all = zscore_pixels(filtered_video, dtype)
    preds = np.empty((h * w, t), dtype=np.float32)
    for start in range(0, h * w, batch_pixels):
        xb = x_all[start : start + batch_pixels][:, :, None]
        preds[start : start + batch_pixels] = _forward_acts(layers, xb)[-1][:, :, 0]
    return VideoTensor(preds.T.reshape(t, h, w), filtered_video.fps)


class PixelwiseConv1DRegressor(BaseEstimator):
    """Estimator facade over :func:`train_1d` / :func:`predict_1d`."""

    def __init__(self, learning_rate: float = 1e-3, epochs: int = 3,
                 batch_pixels: int = 64, seed: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_pixels = batch_pixels
        self.seed = seed

    def fit(self, X, y):
        X = check_video(X)
        y = check_trace(y)
        cfg = TrainConfig1D(learning_rate=self.learning_rate, epochs=self.epochs,
                            batch_pixels=self.batch_pixels, seed=self.seed)
        self.network_, self.loss_log_ = train_1d(X, y, cfg)
        return self

    def predict(self, X) -> VideoTensor:
        if not hasattr(self, "network_"):
            raise NotFittedError("PixelwiseConv1DRegressor must be fitted before predict")
        return predict_1d(self.network_, check_video(X))
