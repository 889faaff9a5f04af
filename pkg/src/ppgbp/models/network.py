"""Small numpy regressors with hand-written backpropagation.

Model kinds
-----------
``mean``    predicts stored (SBP, DBP) constants
``linear``  flattened window -> dense(2)
``mlp``     flattened window -> dense(h1) -> ReLU -> ... -> dense(2)
``cnn1d``   [conv1d -> ReLU] * n -> global average pool -> [dense -> ReLU] * m -> dense(2)

Convolutions run channels-last internally, shape (batch, time, channels).
The final layer is always a linear dense layer named ``out``. Networks
predict standardized targets; :class:`Parameters` carries the frozen
affine map back to mmHg.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidSpecError

KINDS = ("mean", "linear", "mlp", "cnn1d")
N_OUTPUTS = 2


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "cnn1d"
    input_channels: int = 1
    input_len: int = 875
    hidden: tuple[int, ...] = (128, 64)
    conv: tuple[tuple[int, int, int], ...] = ((16, 9, 2), (32, 9, 2), (32, 9, 2))
    dense: tuple[int, ...] = (64,)
    pooling: str = "gap"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "dense", tuple(int(h) for h in self.dense))
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in c) for c in self.conv))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_channels": self.input_channels,
                "input_len": self.input_len, "hidden": list(self.hidden),
                "conv": [list(c) for c in self.conv], "dense": list(self.dense),
                "pooling": self.pooling}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if "conv" in d:
            d["conv"] = tuple(tuple(c) for c in d["conv"])
        for k in ("hidden", "dense"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ---------------------------------------------------------------- layers

class Dense:
    def __init__(self, name, n_in, n_out, relu):
        self.name, self.n_in, self.n_out, self.relu = name, n_in, n_out, relu

    def shapes(self):
        return {f"{self.name}.weight": (self.n_in, self.n_out), f"{self.name}.bias": (self.n_out,)}

    @property
    def fan_in(self):
        return self.n_in

    def forward(self, x, p):
        z = x @ p[f"{self.name}.weight"] + p[f"{self.name}.bias"]
        if self.relu:
            return np.maximum(z, 0.0), (x, z)
        return z, (x, z)

    def backward(self, dy, cache, p):
        x, z = cache
        if self.relu:
            dy = dy * (z > 0)
        grads = {f"{self.name}.weight": x.T @ dy, f"{self.name}.bias": dy.sum(axis=0)}
        return dy @ p[f"{self.name}.weight"].T, grads


class Conv1d:
    """Valid (unpadded) strided convolution followed by ReLU."""

    def __init__(self, name, c_in, filters, kernel, stride):
        self.name, self.c_in, self.filters = name, c_in, filters
        self.kernel, self.stride = kernel, stride

    def shapes(self):
        return {f"{self.name}.weight": (self.filters, self.c_in, self.kernel),
                f"{self.name}.bias": (self.filters,)}

    @property
    def fan_in(self):
        return self.c_in * self.kernel

    def out_len(self, n):
        return (n - self.kernel) // self.stride + 1

    def _wmat(self, p):
        return p[f"{self.name}.weight"].reshape(self.filters, -1).T   # (C*K, F)

    def forward(self, x, p):
        n, length, c = x.shape
        cols = sliding_window_view(x, self.kernel, axis=1)[:, ::self.stride]  # (N, Lo, C, K)
        lo = cols.shape[1]
        cols = cols.reshape(n, lo, c * self.kernel)
        z = cols @ self._wmat(p) + p[f"{self.name}.bias"]
        return np.maximum(z, 0.0), (cols, z, length)

    def backward(self, dy, cache, p):
        cols, z, length = cache
        dy = dy * (z > 0)
        n, lo, ck = cols.shape
        dw = cols.reshape(-1, ck).T @ dy.reshape(-1, self.filters)
        grads = {f"{self.name}.weight": dw.T.reshape(self.filters, self.c_in, self.kernel),
                 f"{self.name}.bias": dy.sum(axis=(0, 1))}
        dcols = (dy @ self._wmat(p).T).reshape(n, lo, self.c_in, self.kernel)
        dx = np.zeros((n, length, self.c_in))
        span = self.stride * (lo - 1) + 1
        for k in range(self.kernel):
            dx[:, k:k + span:self.stride, :] += dcols[:, :, :, k]
        return dx, grads


class GlobalAvgPool:
    def forward(self, x, p):
        return x.mean(axis=1), x.shape

    def backward(self, dy, shape, p):
        return np.broadcast_to(dy[:, None, :] / shape[1], shape).copy(), {}


class GlobalMaxPool:
    def forward(self, x, p):
        idx = x.argmax(axis=1)
        return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0], (x.shape, idx)

    def backward(self, dy, cache, p):
        shape, idx = cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, idx[:, None, :], dy[:, None, :], axis=1)
        return dx, {}


class Flatten:
    """(N, L, C) channels-last -> (N, C*L) in channel-major order."""

    def forward(self, x, p):
        return x.transpose(0, 2, 1).reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape, p):
        n, length, c = shape
        return dy.reshape(n, c, length).transpose(0, 2, 1), {}


def build_layers(spec: ModelSpec) -> list:
    """Layer stack for ``spec``; raises :class:`InvalidSpecError` if inconsistent."""
    if spec.kind not in KINDS:
        raise InvalidSpecError(f"unknown model kind {spec.kind!r}")
    if spec.input_channels not in (1, 3):
        raise InvalidSpecError("input_channels must be 1 or 3")
    if spec.input_len < 1:
        raise InvalidSpecError("input_len must be positive")
    if spec.kind == "mean":
        return []
    flat = spec.input_channels * spec.input_len
    if spec.kind == "linear":
        return [Flatten(), Dense("out", flat, N_OUTPUTS, relu=False)]
    if spec.kind == "mlp":
        layers, n_in = [Flatten()], flat
        for i, h in enumerate(spec.hidden):
            if h < 1:
                raise InvalidSpecError("hidden sizes must be positive")
            layers.append(Dense(f"dense{i}", n_in, h, relu=True))
            n_in = h
        layers.append(Dense("out", n_in, N_OUTPUTS, relu=False))
        return layers

    layers, length, c = [], spec.input_len, spec.input_channels
    if not spec.conv:
        raise InvalidSpecError("cnn1d needs at least one conv layer")
    for i, (filters, kernel, stride) in enumerate(spec.conv):
        if filters < 1 or kernel < 1 or stride < 1:
            raise InvalidSpecError(f"conv layer {i} has non-positive parameters")
        if kernel > length:
            raise InvalidSpecError(
                f"conv layer {i}: kernel {kernel} longer than its input ({length} samples)")
        conv = Conv1d(f"conv{i}", c, filters, kernel, stride)
        layers.append(conv)
        length, c = conv.out_len(length), filters
    if spec.pooling == "gap":
        layers.append(GlobalAvgPool())
        n_in = c
    elif spec.pooling == "max":
        layers.append(GlobalMaxPool())
        n_in = c
    elif spec.pooling == "flatten":
        layers.append(Flatten())
        n_in = c * length
    else:
        raise InvalidSpecError(f"unknown pooling {spec.pooling!r}")
    for i, h in enumerate(spec.dense):
        layers.append(Dense(f"dense{i}", n_in, h, relu=True))
        n_in = h
    layers.append(Dense("out", n_in, N_OUTPUTS, relu=False))
    return layers


# ------------------------------------------------------------ parameters

@dataclass(eq=False)
class Parameters:
    """Named tensors in layer order plus a trainable mask.

    ``target_mean``/``target_scale`` map the network's standardized output
    back to mmHg; they are fixed when training starts and never trained.
    """
    tensors: dict[str, np.ndarray]
    trainable: dict[str, bool] = field(default_factory=dict)
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_OUTPUTS))
    target_scale: np.ndarray = field(default_factory=lambda: np.ones(N_OUTPUTS))

    def __post_init__(self):
        for name in self.tensors:
            self.trainable.setdefault(name, True)
        self.target_mean = np.asarray(self.target_mean, dtype=float)
        self.target_scale = np.asarray(self.target_scale, dtype=float)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.tensors.items()}, dict(self.trainable),
                          self.target_mean.copy(), self.target_scale.copy())

    def n_values(self) -> int:
        return sum(v.size for v in self.tensors.values())


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple]:
    if spec.kind == "mean":
        return {"mean": (N_OUTPUTS,)}
    shapes = {}
    for layer in build_layers(spec):
        if hasattr(layer, "shapes"):
            shapes.update(layer.shapes())
    return shapes


def final_layer_names(spec: ModelSpec) -> list[str]:
    if spec.kind == "mean":
        return []
    return ["out.weight", "out.bias"]


def init(spec: ModelSpec, seed: int = 0) -> Parameters:
    """Fan-in scaled uniform weights, zero biases; deterministic in ``seed``."""
    layers = build_layers(spec)
    if spec.kind == "mean":
        return Parameters({"mean": np.zeros(N_OUTPUTS)})
    rng = np.random.default_rng(seed)
    tensors = {}
    for layer in layers:
        if not hasattr(layer, "shapes"):
            continue
        relu = getattr(layer, "relu", True)
        limit = np.sqrt((6.0 if relu else 3.0) / layer.fan_in)
        for name, shape in layer.shapes().items():
            if name.endswith(".weight"):
                tensors[name] = rng.uniform(-limit, limit, size=shape)
            else:
                tensors[name] = np.zeros(shape)
    return Parameters(tensors)


# ---------------------------------------------------------- forward/back

def _prepare(spec: ModelSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        # a single (channels, length) window
        x = x[None]
    if x.shape[1:] != (spec.input_channels, spec.input_len):
        raise ValueError(f"expected windows of shape ({spec.input_channels}, "
                         f"{spec.input_len}), got {x.shape[1:]}")
    return x.transpose(0, 2, 1)


class Network:
    """Forward and backward passes of a spec'd model on batches of windows."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers = build_layers(spec)

    def forward_std(self, params: Parameters, x, upto: int | None = None, start: int = 0,
                    keep_cache: bool = False):
        """Standardized outputs for windows ``x`` of shape (N, C, L)."""
        h = _prepare(self.spec, x) if start == 0 else x
        caches = []
        for layer in self.layers[start:upto]:
            h, cache = layer.forward(h, params.tensors)
            if keep_cache:
                caches.append(cache)
        return (h, caches) if keep_cache else h

    def features(self, params: Parameters, x) -> np.ndarray:
        """Input to the final dense layer."""
        return self.forward_std(params, x, upto=len(self.layers) - 1)

    def predict(self, params: Parameters, x) -> np.ndarray:
        """(N, 2) predictions in mmHg."""
        if self.spec.kind == "mean":
            n = _prepare(self.spec, x).shape[0]
            return np.tile(params["mean"], (n, 1))
        z = self.forward_std(params, x)
        return z * params.target_scale + params.target_mean

    def loss_and_grads(self, params: Parameters, x, y_std, start: int = 0):
        """Mean squared error on standardized targets and its gradient.

        Loss is averaged over windows and over the two outputs. With
        ``start > 0``, ``x`` is the activation entering layer ``start``.
        """
        out, caches = self.forward_std(params, x, start=start, keep_cache=True)
        diff = out - y_std
        n = diff.shape[0]
        loss = float(np.mean(diff * diff))
        dy = 2.0 * diff / diff.size
        grads = {}
        for layer, cache in zip(reversed(self.layers[start:]), reversed(caches)):
            dy, g = layer.backward(dy, cache, params.tensors)
            grads.update(g)
        return loss, grads

    def relu_masks(self, params: Parameters, x) -> list[np.ndarray]:
        """Active-unit masks of every ReLU layer (used to detect kink crossings)."""
        _, caches = self.forward_std(params, x, keep_cache=True)
        masks = []
        for layer, cache in zip(self.layers, caches):
            if isinstance(layer, Conv1d) or (isinstance(layer, Dense) and layer.relu):
                masks.append(cache[1] > 0)
        return masks


def predict(spec: ModelSpec, params: Parameters, window) -> tuple[float, float]:
    """(SBP, DBP) in mmHg for a single window of shape (channels, length)."""
    x = np.asarray(window, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError("predict takes a single (channels, length) window")
    out = Network(spec).predict(params, x[None])[0]
    return float(out[0]), float(out[1])
