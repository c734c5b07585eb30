"""Minimal trainable CNN substrate in numpy.

Layers compute on NCHW float arrays. Pruning is mask based: every prunable
layer carries a boolean vector over its output structures (filters or
units), and a masked structure also removes the matching input channels of
the next parameterized layer. Masked parameters never reach the forward
pass (they are replaced, not multiplied, so stored garbage is harmless) and
their gradients are zero.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "Layer",
    "Dense",
    "Conv2d",
    "ReLU",
    "MaxPool2d",
    "Flatten",
    "Network",
    "OptimizerState",
    "reference_cnn",
    "forward",
    "backward",
    "cross_entropy",
    "sgd_step",
    "evaluate",
    "predict",
    "train_epoch",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Layer:
    kind = ""
    prunable = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.frozen = False
        self._cache = None

    @property
    def has_params(self) -> bool:
        return bool(self.params)

    @property
    def out_structures(self) -> int:
        return 0

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, params, need_dx=True):
        raise NotImplementedError

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"{type(self).__name__}({shapes}, frozen={self.frozen})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_units: int, out_units: int, rng=None, prunable=True):
        super().__init__()
        self.prunable = prunable
        rng = np.random.default_rng(rng)
        bound = math.sqrt(6.0 / in_units)
        self.params["weight"] = rng.uniform(-bound, bound, (out_units, in_units)).astype(np.float32)
        self.params["bias"] = np.zeros(out_units, dtype=np.float32)

    @property
    def out_structures(self):
        return self.params["weight"].shape[0]

    def output_shape(self, in_shape):
        if in_shape != (self.params["weight"].shape[1],):
            raise ShapeError(
                f"dense layer expects input ({self.params['weight'].shape[1]},), got {in_shape}"
            )
        return (self.out_structures,)

    def forward(self, x, params):
        self._cache = x
        return x @ params["weight"].T + params["bias"]

    def backward(self, dy, params, need_dx=True):
        x = self._cache
        grads = {"weight": dy.T @ x, "bias": dy.sum(axis=0)}
        dx = dy @ params["weight"] if need_dx else None
        return dx, grads


class Conv2d(Layer):
    """Stride-1 convolution with symmetric zero padding."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 padding: int | None = None, rng=None, prunable=True):
        super().__init__()
        self.prunable = prunable
        self.padding = kernel_size // 2 if padding is None else padding
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel_size * kernel_size
        bound = math.sqrt(6.0 / fan_in)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.params["weight"] = rng.uniform(-bound, bound, shape).astype(np.float32)
        self.params["bias"] = np.zeros(out_channels, dtype=np.float32)

    @property
    def out_structures(self):
        return self.params["weight"].shape[0]

    def output_shape(self, in_shape):
        f, c, kh, kw = self.params["weight"].shape
        if len(in_shape) != 3 or in_shape[0] != c:
            raise ShapeError(f"conv2d expects input ({c}, H, W), got {in_shape}")
        p = self.padding
        h, w = in_shape[1] + 2 * p - kh + 1, in_shape[2] + 2 * p - kw + 1
        if h < 1 or w < 1:
            raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {in_shape}")
        return (f, h, w)

    def forward(self, x, params):
        weight = params["weight"]
        f, c, kh, kw = weight.shape
        p = self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        n, _, hp, wp = x.shape
        ho, wo = hp - kh + 1, wp - kw + 1
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        self._cache = (cols, x.shape)
        out = cols @ weight.reshape(f, -1).T + params["bias"]
        return np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(self, dy, params, need_dx=True):
        cols, padded_shape = self._cache
        weight = params["weight"]
        f, c, kh, kw = weight.shape
        n, _, ho, wo = dy.shape
        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, f)
        grads = {"weight": (dyr.T @ cols).reshape(weight.shape), "bias": dyr.sum(axis=0)}
        if not need_dx:
            return None, grads
        dcols = (dyr @ weight.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        p = self.padding
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp, grads


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, params, need_dx=True):
        return (np.where(self._cache, dy, 0).astype(dy.dtype, copy=False) if need_dx else None), {}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def output_shape(self, in_shape):
        s = self.size
        if len(in_shape) != 3 or in_shape[1] % s or in_shape[2] % s:
            raise ShapeError(f"maxpool2d({s}) needs (C, H, W) with H, W divisible by {s}, got {in_shape}")
        return (in_shape[0], in_shape[1] // s, in_shape[2] // s)

    def forward(self, x, params):
        n, c, h, w = x.shape
        s = self.size
        blocks = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // s, w // s, s * s)
        # argmax picks the first maximum, so ties route the gradient deterministically
        idx = blocks.argmax(axis=-1)[..., None]
        self._cache = (idx, x.shape)
        return np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(self, dy, params, need_dx=True):
        if not need_dx:
            return None, {}
        idx, (n, c, h, w) = self._cache
        s = self.size
        g = np.zeros((n, c, h // s, w // s, s * s), dtype=dy.dtype)
        np.put_along_axis(g, idx, dy[..., None], axis=-1)
        g = g.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return g.reshape(n, c, h, w), {}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, params, need_dx=True):
        return (dy.reshape(self._cache) if need_dx else None), {}


class Network:
    """Ordered layers plus per-prunable-layer output masks (True = retained)."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.shapes.append(shape)
        self.masks = {
            i: np.ones(layer.out_structures, dtype=bool)
            for i, layer in enumerate(self.layers)
            if layer.prunable
        }

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def dtype(self):
        for layer in self.layers:
            for arr in layer.params.values():
                return arr.dtype
        return np.dtype(np.float32)

    @property
    def prunable_indices(self) -> list[int]:
        return sorted(self.masks)

    @property
    def parameterized_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.has_params]

    def copy(self) -> "Network":
        clone = copy.deepcopy(self)
        for layer in clone.layers:
            layer._cache = None
        return clone

    def astype(self, dtype) -> "Network":
        clone = self.copy()
        for layer in clone.layers:
            for name in layer.params:
                layer.params[name] = layer.params[name].astype(dtype)
        return clone

    def parameters(self) -> Iterator[tuple[int, str, np.ndarray]]:
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield i, name, arr

    def structure_masks(self) -> dict[int, tuple[np.ndarray | None, np.ndarray | None]]:
        """(input-feature mask, output mask) for every parameterized layer.

        ``None`` means "all retained". Channel masks are expanded through
        Flatten so a dense layer after a conv sees one entry per feature.
        """
        out = {}
        feat = None
        in_shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.has_params:
                own = self.masks.get(i)
                out[i] = (feat, own)
                feat = own
            elif isinstance(layer, Flatten) and feat is not None:
                feat = np.repeat(feat, int(np.prod(in_shape[1:])))
            in_shape = self.shapes[i]
        return out

    def param_masks(self, index: int, structs=None) -> dict[str, np.ndarray | None]:
        """Boolean retention masks per parameter of one layer, None when nothing is masked."""
        structs = self.structure_masks() if structs is None else structs
        in_mask, out_mask = structs.get(index, (None, None))
        layer = self.layers[index]
        if in_mask is None and out_mask is None:
            return {name: None for name in layer.params}
        w = layer.params["weight"]
        o = np.ones(w.shape[0], bool) if out_mask is None else out_mask
        m = o[:, None] if in_mask is None else o[:, None] & in_mask[None, :]
        m = np.broadcast_to(m.reshape(m.shape + (1,) * (w.ndim - 2)), w.shape)
        return {"weight": m, "bias": o}

    def effective_params(self, index: int, structs=None) -> dict[str, np.ndarray]:
        masks = self.param_masks(index, structs)
        params = self.layers[index].params
        return {
            name: arr if masks[name] is None else np.where(masks[name], arr, 0).astype(arr.dtype)
            for name, arr in params.items()
        }

    def forward(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"batch shape {x.shape} does not match input (N, {self.input_shape})")
        x = np.asarray(x, dtype=self.dtype)
        structs = self.structure_masks()
        last = len(self.layers) - 1 if upto is None else upto
        self._structs = structs
        for i in range(last + 1):
            layer = self.layers[i]
            params = self.effective_params(i, structs) if layer.has_params else {}
            x = layer.forward(x, params)
        return x

    def backward(self, dout: np.ndarray, skip_frozen: bool = True) -> list[dict[str, np.ndarray]]:
        """Backpropagate ``dout`` (gradient w.r.t. logits) through the cached forward pass.

        With ``skip_frozen`` the gradients of frozen layers are not computed
        (their entry is an empty dict) and backprop stops below the lowest
        trainable layer.
        """
        structs = self._structs
        grads: list[dict[str, np.ndarray]] = [{} for _ in self.layers]
        trainable = [
            i for i in self.parameterized_indices
            if not (skip_frozen and self.layers[i].frozen)
        ]
        if not trainable:
            return grads
        lowest = trainable[0]
        dy = dout
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            layer = self.layers[i]
            params = self.effective_params(i, structs) if layer.has_params else {}
            dy, g = layer.backward(dy, params, need_dx=i > lowest)
            if g and not (skip_frozen and layer.frozen):
                masks = self.param_masks(i, structs)
                grads[i] = {
                    name: val if masks[name] is None else np.where(masks[name], val, 0).astype(val.dtype)
                    for name, val in g.items()
                }
        return grads

    def snapshot(self) -> dict[tuple[int, str], np.ndarray]:
        return {(i, name): arr.copy() for i, name, arr in self.parameters()}

    def __repr__(self):
        body = ", ".join(layer.kind for layer in self.layers)
        return f"Network(input={self.input_shape}, layers=[{body}])"


def reference_cnn(input_shape=(3, 16, 16), num_classes=10, seed=0,
                  widths=(8, 16, 64, 32)) -> Network:
    """conv-relu-pool x2, two hidden dense layers, and an unprunable classifier."""
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    c1, c2, d1, d2 = widths
    layers = [
        Conv2d(c, c1, 3, rng=rng), ReLU(), MaxPool2d(2),
        Conv2d(c1, c2, 3, rng=rng), ReLU(), MaxPool2d(2),
        Flatten(),
        Dense(c2 * (h // 4) * (w // 4), d1, rng=rng), ReLU(),
        Dense(d1, d2, rng=rng), ReLU(),
        Dense(d2, num_classes, rng=rng, prunable=False),
    ]
    return Network(layers, input_shape)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backward(net: Network, logits: np.ndarray, labels: np.ndarray,
             skip_frozen: bool = True) -> list[dict[str, np.ndarray]]:
    _, dlogits = cross_entropy(logits, labels)
    return net.backward(dlogits, skip_frozen=skip_frozen)


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)


def sgd_step(net: Network, grads: list[dict[str, np.ndarray]], state: OptimizerState, lr: float):
    """Momentum SGD with L2 weight decay (buffer = m * buffer + g + wd * w).

    Frozen layers and masked entries are left bit-identical. All gradients
    are checked before anything is written.
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for i, g in enumerate(grads):
        for name, val in g.items():
            if not np.all(np.isfinite(val)):
                bad = int(np.size(val) - np.isfinite(val).sum())
                raise NonFiniteError(
                    f"non-finite gradient in layer {i} ({net.layers[i].kind}) '{name}': {bad} entries"
                )
    structs = net.structure_masks()
    for i, g in enumerate(grads):
        layer = net.layers[i]
        if layer.frozen or not g:
            continue
        masks = net.param_masks(i, structs)
        for name, grad in g.items():
            w = layer.params[name]
            step = grad + state.weight_decay * w if state.weight_decay else grad
            buf = state.buffers.get((i, name))
            if buf is None:
                buf = np.zeros_like(w)
            buf = state.momentum * buf + step
            if masks[name] is not None:
                buf = np.where(masks[name], buf, 0).astype(w.dtype)
            state.buffers[(i, name)] = buf
            w -= lr * buf


def predict(net: Network, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    out = [net.forward(x[s:s + batch_size]).argmax(axis=1) for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, data, batch_size: int = 1000) -> float:
    """Top-1 accuracy of ``net`` on a dataset (anything with ``x`` and ``y``)."""
    if len(data.y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(net, data.x, batch_size) == data.y))


def train_epoch(net: Network, x: np.ndarray, y: np.ndarray, state: OptimizerState,
                lr_at: Callable[[int], float], batch_size: int,
                rng: np.random.Generator) -> float:
    """One shuffled pass over (x, y); ``lr_at(step)`` gives the rate of each minibatch."""
    n = len(y)
    order = rng.permutation(n)
    losses = []
    for step, start in enumerate(range(0, n, batch_size)):
        idx = order[start:start + batch_size]
        logits = net.forward(x[idx])
        loss, dlogits = cross_entropy(logits, y[idx])
        if not math.isfinite(loss):
            raise NonFiniteError(f"non-finite loss {loss} at minibatch {step}")
        grads = net.backward(dlogits)
        sgd_step(net, grads, state, lr_at(step))
        losses.append(loss)
    return float(np.mean(losses))


def steps_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))
