"""Small differentiable networks (MLP / 3x3 CNN) over a flat parameter vector.

All trainable parameters live in one flat vector ``w``. The :class:`Segment`
layout ties index ranges of ``w`` to layer tensors. Dense weights are stored
unit-major, shape ``(units, d_in)``, so the first ``d_in`` entries are the
incoming weights of hidden unit 0. Conv weights are stored filter-major,
shape ``(filters, 3, 3, in_channels)``.

Images are batches of shape ``(N, height, width, channels)``. ``Flatten``
emits channel-planar order (all of channel 0 row-major, then channel 1, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .data import Dataset, batches

__all__ = [
    "Dense",
    "Conv3x3",
    "ReLU",
    "AvgPool2",
    "Flatten",
    "Head",
    "NetworkSpec",
    "Segment",
    "ParamVector",
    "TrainConfig",
    "mlp",
    "small_cnn",
    "param_layout",
    "init_params",
    "forward",
    "loss_and_grad",
    "sgd",
    "train",
    "evaluate",
]


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class Conv3x3:
    filters: int
    padding: str = "same"


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class AvgPool2:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Head:
    classes: int


Layer = Union[Dense, Conv3x3, ReLU, AvgPool2, Flatten, Head]


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    class_count: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()  # validates the chain

    def shapes(self):
        """Per-layer ``(in_shape, out_shape)`` pairs; raises on inconsistency."""
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (height, width, channels), got {self.input_shape}")
        shape = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv3x3):
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: Conv3x3 needs image input, got {shape}")
                if layer.padding not in ("same", "valid"):
                    raise ValueError(f"layer {i}: unknown padding {layer.padding!r}")
                h, w, _ = shape
                if layer.padding == "valid":
                    h, w = h - 2, w - 2
                if h < 1 or w < 1:
                    raise ValueError(f"layer {i}: image too small for valid conv")
                new = (h, w, layer.filters)
            elif isinstance(layer, AvgPool2):
                if len(shape) != 3 or shape[0] < 2 or shape[1] < 2:
                    raise ValueError(f"layer {i}: AvgPool2 needs image input >= 2x2, got {shape}")
                new = (shape[0] // 2, shape[1] // 2, shape[2])
            elif isinstance(layer, Flatten):
                new = (int(np.prod(shape)),)
            elif isinstance(layer, (Dense, Head)):
                if len(shape) != 1:
                    raise ValueError(f"layer {i}: {type(layer).__name__} needs flat input, add Flatten")
                new = (layer.units if isinstance(layer, Dense) else layer.classes,)
            elif isinstance(layer, ReLU):
                new = shape
            else:
                raise ValueError(f"layer {i}: unknown layer {layer!r}")
            out.append((shape, new))
            shape = new
        if shape != (self.class_count,):
            raise ValueError(f"network ends in shape {shape}, expected ({self.class_count},)")
        return out


def mlp(input_shape, hidden=(300, 100), classes=10):
    layers = [Flatten()]
    for units in hidden:
        layers += [Dense(units), ReLU()]
    layers.append(Head(classes))
    return NetworkSpec(input_shape, layers, classes)


def small_cnn(input_shape=(32, 32, 3), filters=(16, 8, 4), classes=10, padding="valid", pool=False):
    """Three 3x3 conv layers followed by a linear head.

    The defaults (valid padding, no pooling) give 28,950 parameters on
    32x32x3 inputs.
    """
    layers = []
    for f in filters:
        layers += [Conv3x3(f, padding), ReLU()]
        if pool:
            layers.append(AvgPool2())
    layers += [Flatten(), Head(classes)]
    return NetworkSpec(input_shape, layers, classes)


class Segment(NamedTuple):
    layer: int
    kind: str  # "weight" or "bias"
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def stop(self):
        return self.offset + self.size


def param_layout(spec):
    segments = []
    offset = 0
    for i, ((in_shape, out_shape), layer) in enumerate(zip(spec.shapes(), spec.layers)):
        if isinstance(layer, (Dense, Head)):
            wshape = (out_shape[0], in_shape[0])
        elif isinstance(layer, Conv3x3):
            wshape = (layer.filters, 3, 3, in_shape[2])
        else:
            continue
        seg = Segment(i, "weight", offset, wshape)
        segments.append(seg)
        offset = seg.stop
        seg = Segment(i, "bias", offset, (wshape[0],))
        segments.append(seg)
        offset = seg.stop
    return tuple(segments)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        pos = 0
        for seg in self.layout:
            if seg.offset != pos:
                raise ValueError(f"layout gap/overlap at offset {pos}")
            pos = seg.stop
        if pos != self.values.shape[0]:
            raise ValueError(f"layout covers {pos} entries but vector has {self.values.shape[0]}")

    @property
    def dim(self):
        return self.values.shape[0]

    def segment(self, layer, kind="weight"):
        for seg in self.layout:
            if seg.layer == layer and seg.kind == kind:
                return seg
        raise KeyError((layer, kind))

    def unflatten(self):
        """Map ``(layer, kind)`` to reshaped views of ``values``."""
        return {(s.layer, s.kind): self.values[s.offset : s.stop].reshape(s.shape) for s in self.layout}

    @classmethod
    def flatten(cls, layout, tensors):
        values = np.concatenate([np.asarray(tensors[(s.layer, s.kind)]).reshape(-1) for s in layout])
        return cls(values, tuple(layout))


def _values(w):
    return w.values if isinstance(w, ParamVector) else np.asarray(w)


def init_params(spec, seed):
    """Fan-in scaled uniform weights in ``+-sqrt(6 / fan_in)``, zero biases.

    Values are rounded to float32 so that 32-bit checkpoints are lossless.
    """
    layout = param_layout(spec)
    rng = np.random.default_rng(seed)
    values = np.zeros(layout[-1].stop if layout else 0, dtype=np.float32)
    for seg in layout:
        if seg.kind != "weight":
            continue
        fan_in = int(np.prod(seg.shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        values[seg.offset : seg.stop] = rng.uniform(-bound, bound, seg.size)
    return ParamVector(values.astype(np.float64), layout)


def _conv_cols(x, padding):
    if padding == "same":
        x = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(1, 2))
    # (N, Ho, Wo, C, 3, 3) -> (N, Ho, Wo, 3, 3, C)
    win = win.transpose(0, 1, 2, 4, 5, 3)
    n, ho, wo = win.shape[:3]
    return win.reshape(n * ho * wo, -1), x.shape, (n, ho, wo)


def _run(spec, w, x, keep_cache):
    w = _values(w)
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ValueError(f"batch shape {x.shape} does not match input_shape {spec.input_shape}")
    x = x.astype(w.dtype, copy=False)
    params = {(s.layer, s.kind): w[s.offset : s.stop].reshape(s.shape) for s in param_layout(spec)}
    cache = []
    h = x
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, (Dense, Head)):
            wt, b = params[(i, "weight")], params[(i, "bias")]
            cache.append(h if keep_cache else None)
            h = h @ wt.T + b
        elif isinstance(layer, Conv3x3):
            wt, b = params[(i, "weight")], params[(i, "bias")]
            cols, padded_shape, (n, ho, wo) = _conv_cols(h, layer.padding)
            cache.append((cols, padded_shape) if keep_cache else None)
            h = (cols @ wt.reshape(wt.shape[0], -1).T + b).reshape(n, ho, wo, -1)
        elif isinstance(layer, ReLU):
            cache.append(h > 0 if keep_cache else None)
            h = np.maximum(h, 0)
        elif isinstance(layer, AvgPool2):
            cache.append(h.shape if keep_cache else None)
            n, hh, ww, c = h.shape
            h2, w2 = hh // 2, ww // 2
            h = h[:, : 2 * h2, : 2 * w2].reshape(n, h2, 2, w2, 2, c).mean(axis=(2, 4))
        elif isinstance(layer, Flatten):
            cache.append(h.shape if keep_cache else None)
            h = h.transpose(0, 3, 1, 2).reshape(h.shape[0], -1) if h.ndim == 4 else h
    return h, params, cache


def forward(spec, w, x):
    """Logits of shape ``(N, class_count)``."""
    return _run(spec, w, x, keep_cache=False)[0]


def _softmax_xent(logits, labels, k):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be a vector with one entry per example")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n


def loss_and_grad(spec, w, x, labels):
    """Mean softmax cross-entropy and its gradient (same layout as ``w``)."""
    wv = _values(w)
    logits, params, cache = _run(spec, wv, x, keep_cache=True)
    loss, g = _softmax_xent(logits, labels, spec.class_count)
    grad = np.zeros_like(wv)
    layout = {(s.layer, s.kind): s for s in param_layout(spec)}
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, c = spec.layers[i], cache[i]
        if isinstance(layer, (Dense, Head)):
            ws, bs = layout[(i, "weight")], layout[(i, "bias")]
            grad[ws.offset : ws.stop] = (g.T @ c).reshape(-1)
            grad[bs.offset : bs.stop] = g.sum(axis=0)
            if i > 0:
                g = g @ params[(i, "weight")]
        elif isinstance(layer, Conv3x3):
            ws, bs = layout[(i, "weight")], layout[(i, "bias")]
            cols, padded_shape = c
            g2 = g.reshape(-1, g.shape[-1])
            grad[ws.offset : ws.stop] = (g2.T @ cols).reshape(-1)
            grad[bs.offset : bs.stop] = g2.sum(axis=0)
            if i > 0:
                wt = params[(i, "weight")]
                n, ho, wo, _ = g.shape
                dcols = (g2 @ wt.reshape(wt.shape[0], -1)).reshape(n, ho, wo, 3, 3, -1)
                dx = np.zeros(padded_shape, dtype=g.dtype)
                for a in range(3):
                    for b in range(3):
                        dx[:, a : a + ho, b : b + wo, :] += dcols[:, :, :, a, b, :]
                g = dx[:, 1:-1, 1:-1, :] if layer.padding == "same" else dx
        elif isinstance(layer, ReLU):
            g = g * c
        elif isinstance(layer, AvgPool2):
            n, hh, ww, ch = c
            h2, w2 = hh // 2, ww // 2
            up = np.repeat(np.repeat(g / 4.0, 2, axis=1), 2, axis=2)
            g = np.zeros(c, dtype=g.dtype)
            g[:, : 2 * h2, : 2 * w2] = up
        elif isinstance(layer, Flatten):
            if len(c) == 4:
                n, hh, ww, ch = c
                g = g.reshape(n, ch, hh, ww).transpose(0, 2, 3, 1)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 128
    epochs_per_round: int = 10
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_per_round < 0:
            raise ValueError("epochs_per_round must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


GradFn = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


def sgd(x0, loss_grad: GradFn, data: Dataset, cfg: TrainConfig, step_hook: Optional[Callable] = None):
    """Minibatch SGD with heavy-ball momentum on an arbitrary flat vector.

    ``loss_grad(params, inputs, labels)`` returns ``(loss, grad)``. When given,
    ``step_hook(grad)`` transforms each gradient before the update.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    params = np.array(x0, dtype=np.float64, copy=True)
    velocity = np.zeros_like(params)
    for epoch in range(cfg.epochs_per_round):
        for xb, yb in batches(data, cfg.batch_size, cfg.seed, epoch):
            _, g = loss_grad(params, xb, yb)
            if step_hook is not None:
                g = step_hook(g)
            velocity *= cfg.momentum
            velocity += g
            params -= cfg.learning_rate * velocity
    return params


def train(spec, w_init, data, cfg, step_hook=None):
    """Train all parameters of ``spec`` starting from ``w_init``."""
    w0 = _values(w_init)
    values = sgd(w0, lambda p, xb, yb: loss_and_grad(spec, p, xb, yb), data, cfg, step_hook)
    layout = w_init.layout if isinstance(w_init, ParamVector) else param_layout(spec)
    return ParamVector(values, layout)


def evaluate(spec, w, data, batch_size=2048):
    """Fraction of argmax-correct predictions (ties go to the lowest class)."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, n, batch_size):
        logits = forward(spec, w, data.images[start : start + batch_size])
        correct += int((logits.argmax(axis=1) == data.labels[start : start + batch_size]).sum())
    return correct / n
