"""Layer stacks with hand-written backpropagation, SGD with momentum, cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DEFAULT_DTYPE, Rng


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def check_input(self, in_shape: tuple) -> None:
        pass

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, cache, dy, param_grads=True):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"type": self.kind}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.describe().items() if k != "type")
        return f"{self.kind}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.params = {
            "weight": np.zeros((out_features, in_features), dtype=dtype),
            "bias": np.zeros(out_features, dtype=dtype),
        }

    def check_input(self, in_shape):
        if in_shape != (self.in_features,):
            raise ValueError(f"expects ({self.in_features},) features, got {in_shape}")

    def output_shape(self, in_shape):
        return (self.out_features,)

    def forward(self, x, train):
        return x @ self.params["weight"].T + self.params["bias"], x if train else None

    def backward(self, x, dy, param_grads=True):
        dx = dy @ self.params["weight"]
        if not param_grads:
            return dx, None
        return dx, [dy.T @ x, dy.sum(axis=0)]

    def describe(self):
        return {"type": self.kind, "in": self.in_features, "out": self.out_features}


class Conv2d(Layer):
    """2-D convolution on channels-last activations; weights stored ``[out, in, k, k]``."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, pad=1, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.params = {
            "weight": np.zeros((out_channels, in_channels, kernel, kernel), dtype=dtype),
            "bias": np.zeros(out_channels, dtype=dtype),
        }

    def check_input(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(f"expects ({self.in_channels}, H, W) input, got {in_shape}")
        h, w = in_shape[1] + 2 * self.pad, in_shape[2] + 2 * self.pad
        if h < self.kernel or w < self.kernel:
            raise ValueError(f"input {in_shape} smaller than kernel {self.kernel}")

    def output_shape(self, in_shape):
        _, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.pad
        return (self.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def _wmat(self):
        # columns ordered (ki, kj, c) to match the window layout below
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.out_channels, -1)

    def forward(self, x, train):
        n, h, w, c = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, :, i, j, :] = xp[:, i:i + s * ho:s, j:j + s * wo:s, :]
        cols = cols.reshape(n * ho * wo, k * k * c)
        out = (cols @ self._wmat().T + self.params["bias"]).reshape(n, ho, wo, self.out_channels)
        return out, ((cols, x.shape) if train else None)

    def backward(self, cache, dy, param_grads=True):
        cols, (n, h, w, c) = cache
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = dy.shape[1], dy.shape[2]
        g = dy.reshape(-1, self.out_channels)
        dcols = (g @ self._wmat()).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, p:p + h, p:p + w, :] if p else dxp
        if not param_grads:
            return dx, None
        dw = (g.T @ cols).reshape(self.out_channels, k, k, c).transpose(0, 3, 1, 2)
        return dx, [np.ascontiguousarray(dw), g.sum(axis=0)]

    def describe(self):
        return {"type": self.kind, "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel, "stride": self.stride, "pad": self.pad}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        mask = x > 0
        return x * mask, (mask if train else None)

    def backward(self, mask, dy, param_grads=True):
        return dy * mask, ([] if param_grads else None)


class MaxPool2d(Layer):
    """Non-overlapping max pooling on channels-last activations.

    Trailing rows/cols that do not fill a window are dropped; the gradient of a
    tied window goes to its first maximum in row-major order.
    """

    kind = "maxpool2d"

    def __init__(self, size=2):
        super().__init__()
        self.size = size

    def check_input(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] < self.size or in_shape[2] < self.size:
            raise ValueError(f"expects (C, H>={self.size}, W>={self.size}) input, got {in_shape}")

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.size, w // self.size)

    def forward(self, x, train):
        s = self.size
        ho, wo = x.shape[1] // s, x.shape[2] // s
        taps = [x[:, i:i + s * ho:s, j:j + s * wo:s, :] for i in range(s) for j in range(s)]
        out = taps[0]
        for t in taps[1:]:
            out = np.maximum(out, t)
        if not train:
            return out, None
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for t in taps:
            m = (t == out) & ~taken
            taken |= m
            masks.append(m)
        return out, (masks, x.shape)

    def backward(self, cache, dy, param_grads=True):
        masks, shape = cache
        s = self.size
        ho, wo = dy.shape[1], dy.shape[2]
        dx = np.zeros(shape, dtype=dy.dtype)
        for idx, m in enumerate(masks):
            i, j = divmod(idx, s)
            dx[:, i:i + s * ho:s, j:j + s * wo:s, :] = dy * m
        return dx, ([] if param_grads else None)

    def describe(self):
        return {"type": self.kind, "size": self.size}


class Flatten(Layer):
    """Flattens channels-last activations: feature order is (row, col, channel)."""

    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        return x.reshape(x.shape[0], -1), (x.shape if train else None)

    def backward(self, shape, dy, param_grads=True):
        return dy.reshape(shape), ([] if param_grads else None)


_LAYER_TYPES = {
    "dense": lambda d, dtype: Dense(d["in"], d["out"], dtype=dtype),
    "conv2d": lambda d, dtype: Conv2d(d["in"], d["out"], d["kernel"], d["stride"], d["pad"], dtype=dtype),
    "relu": lambda d, dtype: ReLU(),
    "maxpool2d": lambda d, dtype: MaxPool2d(d["size"]),
    "flatten": lambda d, dtype: Flatten(),
}


class LayerStack:
    """Ordered differentiable layers mapping ``[N, C, H, W]`` images to ``[N, K]`` logits.

    ``forward(x, train_mode=True)`` records a tape consumed by the next
    :meth:`backward`.  :meth:`forward_tape` returns the tape explicitly so that
    several branches can be differentiated against the same parameters.
    """

    def __init__(self, layers, input_shape, dtype=DEFAULT_DTYPE):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self._tape = None
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                layer.check_input(shape)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer!r}): {exc}") from None
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ValueError(f"stack must end in a flat [N, K] output, got per-item shape {shape}")
        self.num_classes = shape[0]

    # parameters -----------------------------------------------------------
    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for _, p in self.named_params()]

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def architecture(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.describe() for l in self.layers]}

    def astype(self, dtype) -> "LayerStack":
        clone = LayerStack.from_architecture(self.architecture(), dtype=dtype)
        for dst, src in zip(clone.params, self.params):
            dst[...] = src
        return clone

    def copy(self) -> "LayerStack":
        return self.astype(self.dtype)

    @classmethod
    def from_architecture(cls, arch: dict, dtype=DEFAULT_DTYPE) -> "LayerStack":
        layers = []
        for d in arch["layers"]:
            if d.get("type") not in _LAYER_TYPES:
                raise ValueError(f"unknown layer type {d.get('type')!r}")
            layers.append(_LAYER_TYPES[d["type"]](d, dtype))
        return cls(layers, arch["input_shape"], dtype=dtype)

    # passes ---------------------------------------------------------------
    def forward_tape(self, x, train_mode=True):
        x = np.asarray(x)
        if x.ndim != len(self.input_shape) + 1 or x.shape[1:] != self.input_shape:
            raise ValueError(f"layer 0 ({self.layers[0]!r}): expected input [N, "
                             f"{', '.join(map(str, self.input_shape))}], got {list(x.shape)}")
        h = x.astype(self.dtype, copy=False)
        if h.ndim == 4:
            h = h.transpose(0, 2, 3, 1)  # activations are channels-last internally
        tape = []
        for layer in self.layers:
            h, cache = layer.forward(h, train_mode)
            tape.append(cache)
        return h, (tape if train_mode else None)

    def forward(self, x, train_mode=False):
        logits, tape = self.forward_tape(x, train_mode)
        self._tape = tape
        return logits

    __call__ = forward

    def backward(self, upstream, tape=None, param_grads=True):
        """Gradients of ``sum(upstream * logits)`` w.r.t. parameters and input.

        Returns ``(grads, input_grad)``; ``grads`` is ``None`` when
        ``param_grads`` is false, otherwise one array per parameter in
        :attr:`params` order.
        """
        tape = self._tape if tape is None else tape
        if tape is None:
            raise RuntimeError("backward called before a train-mode forward")
        g = np.asarray(upstream, dtype=self.dtype)
        per_layer = []
        for layer, cache in zip(reversed(self.layers), reversed(tape)):
            g, pg = layer.backward(cache, g, param_grads)
            per_layer.append(pg)
        if g.ndim == 4:
            g = np.ascontiguousarray(g.transpose(0, 3, 1, 2))
        if not param_grads:
            return None, g
        grads = [gp.astype(self.dtype, copy=False) for pg in reversed(per_layer) for gp in pg]
        return grads, g

    def predict_logits(self, x, batch_size=512):
        x = np.asarray(x)
        if len(x) == 0:
            return np.zeros((0, self.num_classes), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def kaiming_uniform_(stack: LayerStack, rng: Rng) -> LayerStack:
    """Fan-in Kaiming-uniform weights, zero biases."""
    for layer in stack.layers:
        if "weight" not in layer.params:
            continue
        w = layer.params["weight"]
        fan_in = int(np.prod(w.shape[1:]))
        bound = math.sqrt(6.0 / fan_in)
        w[...] = rng.uniform(-bound, bound, w.shape)
        layer.params["bias"][...] = 0
    return stack


def linear(input_shape, num_classes, dtype=DEFAULT_DTYPE, rng=None) -> LayerStack:
    """Softmax regression: flatten then one dense layer."""
    stack = LayerStack([Flatten(), Dense(int(np.prod(input_shape)), num_classes, dtype)], input_shape, dtype)
    return kaiming_uniform_(stack, rng) if rng is not None else stack


def mlp(input_shape, num_classes, hidden=128, dtype=DEFAULT_DTYPE, rng=None) -> LayerStack:
    n_in = int(np.prod(input_shape))
    stack = LayerStack([Flatten(), Dense(n_in, hidden, dtype), ReLU(), Dense(hidden, num_classes, dtype)],
                       input_shape, dtype)
    return kaiming_uniform_(stack, rng) if rng is not None else stack


def tiny_cnn(input_shape, num_classes, dtype=DEFAULT_DTYPE, rng=None) -> LayerStack:
    c, h, w = input_shape
    flat = 32 * (h // 4) * (w // 4)
    stack = LayerStack([
        Conv2d(c, 16, 3, 1, 1, dtype), ReLU(), MaxPool2d(2),
        Conv2d(16, 32, 3, 1, 1, dtype), ReLU(), MaxPool2d(2),
        Flatten(), Dense(flat, num_classes, dtype),
    ], input_shape, dtype)
    return kaiming_uniform_(stack, rng) if rng is not None else stack


ARCHITECTURES = {"linear": linear, "mlp": mlp, "tiny_cnn": tiny_cnn}


def build_model(arch: str, input_shape, num_classes, rng: Rng, dtype=DEFAULT_DTYPE) -> LayerStack:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch](tuple(input_shape), num_classes, dtype=dtype, rng=rng)


@dataclass
class SGD:
    """Heavy-ball SGD; weight decay is folded into the gradient (coupled L2)."""

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list = field(default_factory=list)

    def step(self, stack: LayerStack, grads) -> None:
        params = stack.params
        if len(grads) != len(params):
            raise ValueError(f"expected {len(params)} gradients, got {len(grads)}")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            d = g + self.weight_decay * p if self.weight_decay else g
            v *= self.momentum
            v += d
            p -= (self.lr * v).astype(p.dtype, copy=False)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
