"""Region-specific 3D network built by transfer learning from the 1D stack.

Spatial filter size 1 makes the first 21 layers per-pixel copies of the
1D network; a single dense layer then reads the 3-channel activation map
of every pixel at each timestep and emits one output sample.  The dense
weights are initialized to the 1D network's final-layer weights divided
by the pixel count, which makes the untrained 3D output exactly the
spatial mean of the per-pixel 1D predictions.

Inverted dropout (survivors scaled by 1/(1-p) at train time) is applied
to the input and to the final activation map; evaluation mode applies no
dropout and needs no rescaling.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .nn1d import (
    ARCHITECTURE_1D,
    AdamState,
    Conv1DLayer,
    Network1D,
    _backward_acts,
    _forward_acts,
    _philox,
    _zscore_target,
    adam_step,
    zscore_pixels,
)
from .tensor_io import Trace, VideoTensor
from .validation import check_same_frames, check_trace, check_video

_STREAM_DROPOUT = 2

_PIXELWISE_ARCH = ARCHITECTURE_1D[:21]


@dataclass(eq=False)
class Network3D:
    """21 per-pixel conv layers plus one dense spatial readout layer."""

    pixelwise: list[Conv1DLayer]
    dense_weights: np.ndarray  # (H, W, 3)
    dense_bias: np.ndarray  # shape (1,)
    dropout_p: float = 0.2

    def __post_init__(self):
        spec = [(l.kernel_size, l.in_channels, l.out_channels, l.dilation, l.activation)
                for l in self.pixelwise]
        if spec != _PIXELWISE_ARCH:
            raise ValueError("pixelwise stage must match the first 21 layers of the 1D stack")
        self.dense_weights = np.asarray(self.dense_weights)
        self.dense_bias = np.asarray(self.dense_bias).reshape(1)
        if self.dense_weights.ndim != 3 or self.dense_weights.shape[2] != 3:
            raise ValueError(f"dense weights must be (H, W, 3), got {self.dense_weights.shape}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    @property
    def height(self) -> int:
        return self.dense_weights.shape[0]

    @property
    def width(self) -> int:
        return self.dense_weights.shape[1]

    @property
    def dtype(self):
        return self.dense_weights.dtype

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.pixelwise:
            params.append(layer.weights)
            params.append(layer.bias)
        params.append(self.dense_weights)
        params.append(self.dense_bias)
        return params


@dataclass(frozen=True)
class TrainConfig3D:
    learning_rate: float = 8e-7
    epochs: int = 60
    segment_frames: int = 256
    seed: int = 0

    def __post_init__(self):
        # lr = 0 is allowed: "parameters unchanged" is a documented contract
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.segment_frames < 1:
            raise ValueError("epochs and segment_frames must be >= 1")


def init_from_1d(net1d: Network1D, height: int, width: int,
                 dropout_p: float = 0.2) -> Network3D:
    """Transfer-initialize: copy layers 1..21, spread layer 22 over pixels.

    Each dense weight is the matching final-layer weight divided by the
    pixel count; the dense bias is the final-layer bias unchanged, which
    is what makes the initialized output equal the pixel mean of the 1D
    predictions.
    """
    pixelwise = copy.deepcopy(net1d.layers[:21])
    final = net1d.layers[21]
    w_final = final.weights[0, :, 0]  # (3,)
    dense = np.broadcast_to(w_final / (height * width), (height, width, 3)).astype(
        net1d.dtype
    ).copy()
    return Network3D(pixelwise, dense, final.bias.astype(net1d.dtype).copy(), dropout_p)


def _draw_masks(net: Network3D, frames: int, rng) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Inverted-dropout masks for the input and the final activation map."""
    p = net.dropout_p
    if p == 0.0:
        return None, None
    if rng is None:
        raise ValueError("train-mode dropout requires a random generator")
    n_pixels = net.height * net.width
    scale = 1.0 / (1.0 - p)
    mask_in = (rng.random((n_pixels, frames, 1)) >= p).astype(net.dtype) * scale
    mask_act = (rng.random((n_pixels, frames, 3)) >= p).astype(net.dtype) * scale
    return mask_in, mask_act


def _stage_forward(net: Network3D, zx: np.ndarray, mask_in, mask_act):
    """Cached forward on z-scored pixel traces ``zx`` shaped (pixels, T)."""
    xt = zx[:, :, None]
    if mask_in is not None:
        xt = xt * mask_in
    acts = _forward_acts(net.pixelwise, xt)
    act_map = acts[-1]
    if mask_act is not None:
        act_map = act_map * mask_act
    flat = net.dense_weights.reshape(-1, 3)
    pred = net.dense_bias[0] + np.einsum("ptc,pc->t", act_map, flat)
    return pred, acts, act_map


def _stage_gradients(net: Network3D, acts, act_map, mask_act, g_pred):
    """Gradients of all parameters given dL/dpred; mirrors _stage_forward."""
    flat = net.dense_weights.reshape(-1, 3)
    d_dense = np.einsum("t,ptc->pc", g_pred, act_map).reshape(net.dense_weights.shape)
    d_bias = np.asarray([g_pred.sum()], dtype=net.dtype)
    g_act = (g_pred[None, :, None] * flat[:, None, :]).astype(net.dtype)
    if mask_act is not None:
        g_act = g_act * mask_act
    grads_pix, _ = _backward_acts(net.pixelwise, acts, g_act)
    grads = [g for pair in grads_pix for g in pair]
    grads.append(d_dense.astype(net.dtype))
    grads.append(d_bias)
    return grads


def forward3d(net: Network3D, segment: VideoTensor, mode: str = "eval",
              rng=None, batch_pixels: int = 512) -> Trace:
    """Run the 3D network on a segment whose grid matches the dense layer.

    ``mode="train"`` applies seeded inverted dropout to the input and the
    final activation map; ``mode="eval"`` is deterministic and pure.  The
    segment is consumed as-is (callers normalize; see :func:`predict_3d`).
    """
    segment = check_video(segment)
    if (segment.height, segment.width) != (net.height, net.width):
        raise ValueError(
            f"segment grid {segment.height} x {segment.width} does not match "
            f"network {net.height} x {net.width}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    t = segment.frames
    zx = segment.data.reshape(t, -1).T.astype(net.dtype)
    if mode == "train":
        mask_in, mask_act = _draw_masks(net, t, rng)
        pred, _, _ = _stage_forward(net, zx, mask_in, mask_act)
        return Trace(pred.astype(np.float32), segment.fps)

    # eval: stream over pixel chunks, accumulating the dense sum
    flat = net.dense_weights.reshape(-1, 3)
    acc = np.zeros(t, dtype=np.float64)
    for start in range(0, zx.shape[0], batch_pixels):
        chunk = zx[start : start + batch_pixels][:, :, None]
        act = _forward_acts(net.pixelwise, chunk)[-1]
        acc += np.einsum("ptc,pc->t", act, flat[start : start + batch_pixels])
    acc += float(net.dense_bias[0])
    return Trace(acc.astype(np.float32), segment.fps)


def predict_3d(net: Network3D, filtered_video: VideoTensor) -> Trace:
    """Evaluate on a whole recording: z-score pixel traces, then forward."""
    video = check_video(filtered_video)
    zx = zscore_pixels(video, net.dtype)
    normalized = VideoTensor(
        zx.T.reshape(video.frames, video.height, video.width), video.fps
    )
    return forward3d(net, normalized, mode="eval")


def train_3d(filtered_video: VideoTensor, target: Trace, net: Network3D,
             cfg: TrainConfig3D = TrainConfig3D()):
    """Fine-tune all parameters on consecutive non-overlapping segments.

    The pixelwise stage is not held fixed.  Dropout masks are resampled
    per segment per epoch from a stream seeded by the config.  Returns the
    trained network (updated in place) and the per-epoch mean loss.
    """
    video = check_video(filtered_video)
    target = check_trace(target)
    check_same_frames(video, target)
    if (video.height, video.width) != (net.height, net.width):
        raise ValueError("video grid does not match the network's region size")
    seg = cfg.segment_frames
    n_segments = video.frames // seg
    if n_segments < 1:
        raise ValueError(
            f"need at least one full {seg}-frame segment, video has {video.frames} frames"
        )

    zx = zscore_pixels(video, net.dtype)
    y = _zscore_target(target, net.dtype)
    params = net.parameters()
    state = AdamState.for_params(params)
    rng = _philox(cfg.seed, _STREAM_DROPOUT)

    epoch_losses = []
    for _ in range(cfg.epochs):
        loss_sum = 0.0
        for i in range(n_segments):
            sl = slice(i * seg, (i + 1) * seg)
            mask_in, mask_act = _draw_masks(net, seg, rng)
            pred, acts, act_map = _stage_forward(net, np.ascontiguousarray(zx[:, sl]),
                                                 mask_in, mask_act)
            diff = pred.astype(np.float64) - y[sl]
            loss_sum += float(np.mean(diff * diff))
            g_pred = ((2.0 / seg) * diff).astype(net.dtype)
            grads = _stage_gradients(net, acts, act_map, mask_act, g_pred)
            adam_step(params, grads, state, cfg.learning_rate)
        epoch_losses.append(loss_sum / n_segments)
    return net, epoch_losses


def export_dense_map(net: Network3D) -> np.ndarray:
    """Per-channel absolute dense weights, shaped (3, H, W), scaled to [0, 1].

    All three channels share one normalizer, the maximum absolute weight
    across the channels, so relative channel strength is preserved.
    """
    maps = np.abs(net.dense_weights.astype(np.float64)).transpose(2, 0, 1)
    peak = maps.max()
    if peak > 0:
        maps = maps / peak
    return maps


class RegionConv3DRegressor(BaseEstimator):
    """Estimator facade: transfer-init from a trained 1D model, fine-tune, predict.

    ``base_model`` may be a fitted :class:`PixelwiseConv1DRegressor` or a
    :class:`Network1D`.  The fitted network is bound to the region size of
    the training video.
    """

    def __init__(self, base_model=None, learning_rate: float = 8e-7, epochs: int = 60,
                 segment_frames: int = 256, dropout: float = 0.2, seed: int = 0):
        self.base_model = base_model
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.segment_frames = segment_frames
        self.dropout = dropout
        self.seed = seed

    def _base_network(self) -> Network1D:
        base = self.base_model
        if isinstance(base, Network1D):
            return base
        network = getattr(base, "network_", None)
        if isinstance(network, Network1D):
            return network
        raise ValueError("base_model must be a Network1D or a fitted 1D regressor")

    def fit(self, X, y):
        X = check_video(X)
        y = check_trace(y)
        net = init_from_1d(self._base_network(), X.height, X.width, self.dropout)
        cfg = TrainConfig3D(learning_rate=self.learning_rate, epochs=self.epochs,
                            segment_frames=self.segment_frames, seed=self.seed)
        self.network_, self.loss_log_ = train_3d(X, y, net, cfg)
        return self

    def predict(self, X) -> Trace:
        if not hasattr(self, "network_"):
            raise NotFittedError("RegionConv3DRegressor must be fitted before predict")
        return predict_3d(self.network_, check_video(X))
