"""Minimal neural-network core: dense/conv/ReLU layers, backprop, Adam/SGD,
Huber loss, and binary checkpoints.

Everything runs in 64-bit floats on numpy. Networks are fixed layer
sequences (no general autodiff graph); inputs always carry a leading batch
dimension. A network is mutated only by its owning trainer; clone for
parallel inference.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_CKPT_MAGIC = b"VNNN"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or incompatible."""


class Layer:
    """Base layer. Subclasses cache forward inputs for backward."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return []

    def grad_items(self) -> list[np.ndarray]:
        return []

    def descriptor(self) -> str:
        raise NotImplementedError

    def _require_cache(self, cache) -> None:
        if cache is None:
            raise RuntimeError("backward() before forward()")


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = np.zeros((in_features, out_features))
        self.bias = np.zeros(out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def init_params(self, rng: np.random.Generator, relu_follows: bool) -> None:
        if relu_follows:
            limit = np.sqrt(6.0 / self.in_features)  # He-uniform
        else:
            limit = np.sqrt(6.0 / (self.in_features + self.out_features))  # Xavier-uniform
        self.weight = rng.uniform(-limit, limit, self.weight.shape)
        self.bias = np.zeros(self.out_features)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"dense layer expects (batch, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self._require_cache(self._x)
        x = self._x
        self.grad_weight = x.T @ grad_out
        self.grad_bias = grad_out.sum(axis=0)
        return grad_out @ self.weight.T

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [self.grad_weight, self.grad_bias]

    def descriptor(self) -> str:
        return f"dense:{self.in_features}:{self.out_features}"


class Conv2D(Layer):
    """Valid-padding 2D convolution with square kernels.

    Output spatial size is floor((in - kernel)/stride) + 1.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.weight = np.zeros((out_channels, in_channels, kernel, kernel))
        self.bias = np.zeros(out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._cache: tuple | None = None

    def init_params(self, rng: np.random.Generator, relu_follows: bool) -> None:
        fan_in = self.in_channels * self.kernel * self.kernel
        fan_out = self.out_channels * self.kernel * self.kernel
        limit = np.sqrt(6.0 / fan_in) if relu_follows else np.sqrt(6.0 / (fan_in + fan_out))
        self.weight = rng.uniform(-limit, limit, self.weight.shape)
        self.bias = np.zeros(self.out_channels)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"conv layer expects (batch, {self.in_channels}, h, w), got {x.shape}")
        b, _, h, w = x.shape
        k, s = self.kernel, self.stride
        if h < k or w < k:
            raise ValueError(f"input {h}x{w} smaller than kernel {k}")
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, -1)
        w2 = self.weight.reshape(self.out_channels, -1)
        out = cols @ w2.T + self.bias
        self._cache = (x.shape, cols, oh, ow)
        return out.reshape(b, oh, ow, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self._require_cache(self._cache)
        x_shape, cols, oh, ow = self._cache
        b = x_shape[0]
        k, s = self.kernel, self.stride
        dmat = grad_out.transpose(0, 2, 3, 1).reshape(b * oh * ow, self.out_channels)
        self.grad_weight = (dmat.T @ cols).reshape(self.weight.shape)
        self.grad_bias = dmat.sum(axis=0)
        dcols = (dmat @ self.weight.reshape(self.out_channels, -1)).reshape(
            b, oh, ow, self.in_channels, k, k
        )
        dx = np.zeros(x_shape)
        for u in range(k):
            for v in range(k):
                dx[:, :, u : u + s * oh : s, v : v + s * ow : s] += dcols[:, :, :, :, u, v].transpose(
                    0, 3, 1, 2
                )
        return dx

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [self.grad_weight, self.grad_bias]

    def descriptor(self) -> str:
        return f"conv:{self.in_channels}:{self.out_channels}:{self.kernel}:{self.stride}"


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self._require_cache(self._mask)
        return np.where(self._mask, grad_out, 0.0)

    def descriptor(self) -> str:
        return "relu"


class Flatten(Layer):
    def __init__(self):
        self._shape: tuple | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        self._require_cache(self._shape)
        return grad_out.reshape(self._shape)

    def descriptor(self) -> str:
        return "flatten"


class Network:
    """Ordered layer stack; the last dense layer is the linear output head."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def descriptor(self) -> str:
        return "|".join(layer.descriptor() for layer in self.layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Backpropagate an output gradient; returns parameter gradients in
        parameters() order."""
        grad = np.asarray(grad_out, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return self.gradients()

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for _, p in layer.param_items()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grad_items()]

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"{i}.{name}", p)
            for i, layer in enumerate(self.layers)
            for name, p in layer.param_items()
        ]


def _parse_layer(token: str) -> Layer:
    parts = token.split(":")
    kind = parts[0]
    try:
        if kind == "dense" and len(parts) == 3:
            return Dense(int(parts[1]), int(parts[2]))
        if kind == "conv" and len(parts) == 5:
            return Conv2D(int(parts[1]), int(parts[2]), int(parts[3]), int(parts[4]))
        if kind == "relu" and len(parts) == 1:
            return ReLU()
        if kind == "flatten" and len(parts) == 1:
            return Flatten()
    except ValueError:
        pass
    raise ValueError(f"bad layer descriptor token {token!r}")


def network_from_descriptor(descriptor: str, seed: int = 0) -> Network:
    """Build and initialize a network from its descriptor string.

    Parameter layers followed by a ReLU get He-uniform init, others (the
    linear head) Xavier-uniform. Initialization is reproducible from seed.
    """
    tokens = [t for t in descriptor.split("|") if t]
    if not tokens:
        raise ValueError("empty network descriptor")
    layers = [_parse_layer(t) for t in tokens]
    rng = np.random.default_rng(seed)
    for i, layer in enumerate(layers):
        if isinstance(layer, (Dense, Conv2D)):
            relu_follows = i + 1 < len(layers) and isinstance(layers[i + 1], ReLU)
            layer.init_params(rng, relu_follows)
    return Network(layers)


def copy_parameters(src: Network, dst: Network) -> None:
    """Copy all parameters bit-exactly; architectures must match."""
    if src.descriptor() != dst.descriptor():
        raise ValueError(
            f"architecture mismatch: {src.descriptor()!r} vs {dst.descriptor()!r}"
        )
    for sp, dp in zip(src.parameters(), dst.parameters()):
        dp[...] = sp


def clone_network(net: Network) -> Network:
    out = network_from_descriptor(net.descriptor(), seed=0)
    copy_parameters(net, out)
    return out


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr)
    if kind == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(net: Network, grads: list[np.ndarray], optimizer) -> Network:
    optimizer.step(net.parameters(), grads)
    return net


def huber_loss(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean-reduced elementwise Huber loss and its gradient w.r.t. pred.

    Per-element gradient is the error clipped to +-delta (divided by the
    element count for the mean reduction).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    err = pred - target
    abs_err = np.abs(err)
    quad = abs_err <= delta
    losses = np.where(quad, 0.5 * err * err, delta * (abs_err - 0.5 * delta))
    grad = np.clip(err, -delta, delta) / err.size
    return float(losses.mean()), grad


def save_checkpoint(net: Network, path: str | Path) -> None:
    """Versioned container: magic, version byte, architecture descriptor,
    then named parameter tensors as little-endian float64."""
    desc = net.descriptor().encode("utf-8")
    items = net.param_items()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<B", _CKPT_VERSION))
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(items)))
        for name, param in items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", param.ndim))
            for dim in param.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(param, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path, expected_descriptor: str | None = None) -> Network:
    """Rebuild a network from a checkpoint; round-trips are bit-exact."""
    blob = Path(path).read_bytes()
    if len(blob) < 5 or blob[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    reader = _Reader(blob, path)
    reader.take(4)
    version = reader.u8()
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    desc = reader.take(reader.u32()).decode("utf-8")
    if expected_descriptor is not None and desc != expected_descriptor:
        raise CheckpointError(
            f"{path}: architecture descriptor mismatch: file has {desc!r}, expected {expected_descriptor!r}"
        )
    net = network_from_descriptor(desc, seed=0)
    params = dict(net.param_items())
    n_params = reader.u32()
    if n_params != len(params):
        raise CheckpointError(f"{path}: parameter count mismatch")
    for _ in range(n_params):
        name = reader.take(reader.u32()).decode("utf-8")
        if name not in params:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        ndim = reader.u8()
        shape = tuple(reader.u32() for _ in range(ndim))
        if shape != params[name].shape:
            raise CheckpointError(f"{path}: parameter {name!r} shape mismatch")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(count * 8), dtype="<f8").reshape(shape)
        params[name][...] = data
    if reader.offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return net
