"""Layer graph with masked weights, forward propagation and backpropagation.

Activations flow between layers as ``(batch, features)`` matrices.  Spatial
layers (convolution, max pooling) view their input as ``(batch, C, H, W)``
flattened channel-major, which is also the order fully connected layers see
after a convolution stack.

Every learnable layer computes with the masked product ``W * T``.
:func:`backward` returns gradients with respect to that product; the caller
applies them to ``W`` directly, so pruned weights keep receiving updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .linalg import KernelSpec, col2im_batch, conv_output_size, im2col_batch
from .params import MaskedParams, ThresholdSpec

FULLY_CONNECTED = "fully_connected"
CONVOLUTION = "convolution"
MAX_POOL = "max_pool"
SIGMOID = "sigmoid"
RELU = "relu"
SOFTMAX_XENT = "softmax_xent_loss"
SIGMOID_XENT = "sigmoid_xent_loss"

LEARNABLE_KINDS = (FULLY_CONNECTED, CONVOLUTION)
LOSS_KINDS = (SOFTMAX_XENT, SIGMOID_XENT)
LAYER_KINDS = (FULLY_CONNECTED, CONVOLUTION, MAX_POOL, SIGMOID, RELU, SOFTMAX_XENT, SIGMOID_XENT)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_dim: int
    output_dim: int
    name: str = ""
    kernel: KernelSpec | None = None
    in_shape: tuple[int, int, int] | None = None  # (C, H, W) for convolution / max_pool
    pool: int = 0
    has_bias: bool = True

    @property
    def learnable(self) -> bool:
        return self.kind in LEARNABLE_KINDS

    @property
    def weight_shape(self) -> tuple[int, int]:
        if self.kind == FULLY_CONNECTED:
            return (self.output_dim, self.input_dim)
        if self.kind == CONVOLUTION:
            return (self.kernel.out_channels, self.kernel.patch_size)
        raise ConfigError(f"layer kind {self.kind!r} has no weights")

    @property
    def bias_size(self) -> int:
        if not self.has_bias:
            return 0
        if self.kind == FULLY_CONNECTED:
            return self.output_dim
        if self.kind == CONVOLUTION:
            return self.kernel.out_channels
        return 0

    @property
    def out_shape(self) -> tuple[int, int, int] | None:
        if self.kind == CONVOLUTION:
            _, h, w = self.in_shape
            oh, ow = conv_output_size(h, w, self.kernel)
            return (self.kernel.out_channels, oh, ow)
        if self.kind == MAX_POOL:
            c, h, w = self.in_shape
            return (c, h // self.pool, w // self.pool)
        return None


def fully_connected(name: str, n_in: int, n_out: int, has_bias: bool = True) -> LayerSpec:
    return LayerSpec(FULLY_CONNECTED, n_in, n_out, name=name, has_bias=has_bias)


def convolution(name: str, in_shape, out_channels: int, kernel: int, stride: int = 1,
                pad: int = 0, has_bias: bool = True) -> LayerSpec:
    c, h, w = in_shape
    ks = KernelSpec(c, out_channels, kernel, kernel, stride, pad)
    oh, ow = conv_output_size(h, w, ks)
    return LayerSpec(CONVOLUTION, c * h * w, out_channels * oh * ow, name=name, kernel=ks,
                     in_shape=(c, h, w), has_bias=has_bias)


def max_pool(in_shape, size: int, name: str = "") -> LayerSpec:
    c, h, w = in_shape
    return LayerSpec(MAX_POOL, c * h * w, c * (h // size) * (w // size), name=name,
                     in_shape=(c, h, w), pool=size)


def activation(kind: str, dim: int, name: str = "") -> LayerSpec:
    return LayerSpec(kind, dim, dim, name=name)


def softmax_xent_loss(n_classes: int) -> LayerSpec:
    return LayerSpec(SOFTMAX_XENT, n_classes, n_classes, name="loss")


def sigmoid_xent_loss() -> LayerSpec:
    return LayerSpec(SIGMOID_XENT, 1, 1, name="loss")


def validate_specs(specs) -> None:
    specs = list(specs)
    if not specs:
        raise ConfigError("network needs at least one layer")
    names = set()
    for i, s in enumerate(specs):
        if s.kind not in LAYER_KINDS:
            raise ConfigError(f"layer {i}: unknown kind {s.kind!r}")
        if s.input_dim < 1 or s.output_dim < 1:
            raise ConfigError(f"layer {i} ({s.kind}): dimensions must be positive")
        if s.kind in LOSS_KINDS and i != len(specs) - 1:
            raise ConfigError(f"loss layer must be last, found {s.kind!r} at position {i}")
        if i > 0 and specs[i - 1].output_dim != s.input_dim:
            raise ConfigError(
                f"layer {i} ({s.name or s.kind}) expects {s.input_dim} inputs, "
                f"previous layer produces {specs[i - 1].output_dim}"
            )
        if s.learnable:
            if not s.name:
                raise ConfigError(f"learnable layer {i} needs a name")
            if s.name in names:
                raise ConfigError(f"duplicate layer name {s.name!r}")
            names.add(s.name)
        if s.kind == CONVOLUTION:
            if s.kernel is None or s.in_shape is None:
                raise ConfigError(f"convolution layer {s.name!r} needs kernel and in_shape")
            if s.kernel.in_channels != s.in_shape[0] or math.prod(s.in_shape) != s.input_dim:
                raise ConfigError(f"convolution layer {s.name!r}: in_shape disagrees with dims")
            if math.prod(s.out_shape) != s.output_dim:
                raise ConfigError(f"convolution layer {s.name!r}: output_dim disagrees with geometry")
        if s.kind == MAX_POOL:
            c, h, w = s.in_shape or (0, 0, 0)
            if s.pool < 1 or h % s.pool or w % s.pool or c * h * w != s.input_dim:
                raise ConfigError(f"max_pool layer {i}: pool {s.pool} must tile {s.in_shape} exactly")
        if s.kind in (SIGMOID, RELU) and s.input_dim != s.output_dim:
            raise ConfigError(f"activation layer {i} must preserve its dimension")
    if specs[-1].kind not in LOSS_KINDS:
        raise ConfigError("network must end with exactly one loss layer")
    if specs[-1].kind == SIGMOID_XENT and specs[-1].input_dim != 1:
        raise ConfigError("sigmoid_xent_loss takes a single logit")
    if not names:
        raise ConfigError("network has no learnable layers")


@dataclass
class Network:
    specs: list[LayerSpec]
    params: list[MaskedParams]
    biases: list[np.ndarray | None]

    def __post_init__(self):
        validate_specs(self.specs)
        learn = [s for s in self.specs if s.learnable]
        if len(self.params) != len(learn) or len(self.biases) != len(learn):
            raise ConfigError(
                f"{len(learn)} learnable layers but {len(self.params)} parameter sets "
                f"and {len(self.biases)} bias vectors"
            )
        for s, p, b in zip(learn, self.params, self.biases):
            if p.w.shape != s.weight_shape:
                raise ShapeError(f"layer {s.name!r}: weight shape {p.w.shape}, expected {s.weight_shape}")
            size = 0 if b is None else b.shape[0]
            if size != s.bias_size:
                raise ShapeError(f"layer {s.name!r}: bias length {size}, expected {s.bias_size}")

    @property
    def learnable_specs(self) -> list[LayerSpec]:
        return [s for s in self.specs if s.learnable]

    @property
    def layer_names(self) -> list[str]:
        return [s.name for s in self.learnable_specs]

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def n_classes(self) -> int:
        last = self.specs[-1]
        return 2 if last.kind == SIGMOID_XENT else last.input_dim

    def copy(self) -> "Network":
        return Network(
            list(self.specs),
            [p.copy() for p in self.params],
            [None if b is None else b.copy() for b in self.biases],
        )


def _feeds_relu(specs, i: int) -> bool:
    for s in specs[i + 1:]:
        if s.kind == MAX_POOL:
            continue
        return s.kind == RELU
    return False


def init_network(specs, seed: int) -> Network:
    """Gaussian weights (He scaling before ReLU, LeCun scaling otherwise), zero biases, all-ones masks."""
    specs = list(specs)
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    params, biases = [], []
    for i, s in enumerate(specs):
        if not s.learnable:
            continue
        shape = s.weight_shape
        fan_in = shape[1]
        std = math.sqrt((2.0 if _feeds_relu(specs, i) else 1.0) / fan_in)
        w = rng.standard_normal(shape) * std
        params.append(MaskedParams(w, np.ones(shape), ThresholdSpec()))
        biases.append(np.zeros(s.bias_size) if s.has_bias else None)
    return Network(specs, params, biases)


# -- model zoo ---------------------------------------------------------------

def xor_specs(hidden: int = 5) -> list[LayerSpec]:
    """2-hidden-1 sigmoid network; the output sigmoid lives in the loss layer."""
    return [
        fully_connected("fc1", 2, hidden),
        activation(SIGMOID, hidden),
        fully_connected("fc2", hidden, 1),
        sigmoid_xent_loss(),
    ]


def lenet_300_100_specs() -> list[LayerSpec]:
    return [
        fully_connected("fc1", 784, 300),
        activation(RELU, 300),
        fully_connected("fc2", 300, 100),
        activation(RELU, 100),
        fully_connected("fc3", 100, 10),
        softmax_xent_loss(10),
    ]


def lenet5_specs() -> list[LayerSpec]:
    conv1 = convolution("conv1", (1, 28, 28), 20, 5)
    pool1 = max_pool(conv1.out_shape, 2)
    conv2 = convolution("conv2", pool1.out_shape, 50, 5)
    pool2 = max_pool(conv2.out_shape, 2)
    return [
        conv1, pool1, conv2, pool2,
        fully_connected("fc1", pool2.output_dim, 500),
        activation(RELU, 500),
        fully_connected("fc2", 500, 10),
        softmax_xent_loss(10),
    ]


MODELS = {
    "xor": xor_specs,
    "lenet-300-100": lenet_300_100_specs,
    "lenet-5": lenet5_specs,
}


# -- propagation -------------------------------------------------------------

@dataclass
class BatchActivations:
    """Per-layer inputs of one minibatch plus what backward needs."""

    inputs: list[np.ndarray]
    cache: list[object]
    loss: float
    correct_count: int
    predictions: np.ndarray
    batch_size: int = field(init=False)

    def __post_init__(self):
        self.batch_size = self.inputs[0].shape[0]


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray | None


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 2 and y.shape[1] > 1:
        y = y.argmax(axis=1)
    y = y.reshape(-1).astype(np.int64)
    if y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for a batch of {n}")
    return y


def loss_and_grad(kind: str, logits: np.ndarray, labels: np.ndarray):
    """Mean loss, gradient w.r.t. the logits (already divided by batch size), predictions."""
    n = logits.shape[0]
    if kind == SOFTMAX_XENT:
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsum
        loss = -logp[np.arange(n), labels].mean()
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        grad /= n
        pred = logits.argmax(axis=1)
    elif kind == SIGMOID_XENT:
        z = logits[:, 0]
        y = labels.astype(np.float64)
        loss = (np.logaddexp(0.0, z) - y * z).mean()
        grad = ((_sigmoid(z) - y) / n)[:, None]
        pred = (z > 0).astype(np.int64)
    else:
        raise ConfigError(f"{kind!r} is not a loss layer")
    return float(loss), grad, pred


def _layer_forward(spec: LayerSpec, x: np.ndarray, p: MaskedParams | None, b):
    """Returns (output, cache)."""
    if spec.kind == FULLY_CONNECTED:
        m = p.w * p.t
        out = x @ m.T
        if b is not None:
            out += b
        return out, m
    if spec.kind == CONVOLUTION:
        n = x.shape[0]
        oc, oh, ow = spec.out_shape
        cols = im2col_batch(x.reshape((n,) + spec.in_shape), spec.kernel)
        m = p.w * p.t
        out = m @ cols
        if b is not None:
            out += b[:, None]
        out = out.reshape(oc, n, oh * ow).transpose(1, 0, 2).reshape(n, -1)
        return out, (m, cols)
    if spec.kind == MAX_POOL:
        n = x.shape[0]
        c, h, w = spec.in_shape
        k = spec.pool
        blocks = (x.reshape(n, c, h // k, k, w // k, k)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h // k, w // k, k * k))
        idx = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return out.reshape(n, -1), idx
    if spec.kind == RELU:
        return np.maximum(x, 0.0), None
    if spec.kind == SIGMOID:
        return _sigmoid(x), None
    raise ConfigError(f"cannot propagate through {spec.kind!r}")


def _propagate(net: Network, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"batch shape {x.shape} does not match network input dimension {net.input_dim}")
    inputs, cache = [x], []
    k = 0
    for spec in net.specs[:-1]:
        if spec.learnable:
            x, c = _layer_forward(spec, x, net.params[k], net.biases[k])
            k += 1
        else:
            x, c = _layer_forward(spec, x, None, None)
        inputs.append(x)
        cache.append(c)
    return inputs, cache


def forward(net: Network, batch, labels) -> BatchActivations:
    inputs, cache = _propagate(net, batch)
    y = _as_labels(labels, inputs[0].shape[0])
    if y.size and (y.min() < 0 or y.max() >= net.n_classes):
        raise ShapeError(f"labels outside [0, {net.n_classes})")
    loss, grad, pred = loss_and_grad(net.specs[-1].kind, inputs[-1], y)
    cache.append(grad)
    return BatchActivations(inputs, cache, loss, int((pred == y).sum()), pred)


def predict(net: Network, batch) -> np.ndarray:
    inputs, _ = _propagate(net, batch)
    logits = inputs[-1]
    if net.specs[-1].kind == SIGMOID_XENT:
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1)


def backward(net: Network, acts: BatchActivations, labels) -> list[LayerGrad]:
    """Minibatch-averaged gradients of the loss w.r.t. each masked product ``W * T`` and each bias."""
    if len(acts.inputs) != len(net.specs) or len(acts.cache) != len(net.specs):
        raise StateError("activation cache does not belong to this network")
    try:
        _as_labels(labels, acts.batch_size)
    except ShapeError as exc:
        raise StateError(f"labels do not match the cached batch: {exc}") from None
    n = acts.batch_size
    g = acts.cache[-1]
    grads: list[LayerGrad] = []
    k = len(net.params)
    for i in range(len(net.specs) - 2, -1, -1):
        spec = net.specs[i]
        x = acts.inputs[i]
        c = acts.cache[i]
        if spec.kind == FULLY_CONNECTED:
            k -= 1
            m = c
            if m.shape != net.params[k].w.shape:
                raise StateError(f"stale activations for layer {spec.name!r}")
            dm = g.T @ x
            db = g.sum(axis=0) if net.biases[k] is not None else None
            grads.append(LayerGrad(dm, db))
            if i > 0:
                g = g @ m
        elif spec.kind == CONVOLUTION:
            k -= 1
            m, cols = c
            if m.shape != net.params[k].w.shape:
                raise StateError(f"stale activations for layer {spec.name!r}")
            oc = m.shape[0]
            gm = g.reshape(n, oc, -1).transpose(1, 0, 2).reshape(oc, -1)
            dm = gm @ cols.T
            db = gm.sum(axis=1) if net.biases[k] is not None else None
            grads.append(LayerGrad(dm, db))
            if i > 0:
                dcols = m.T @ gm
                g = col2im_batch(dcols, (n,) + spec.in_shape, spec.kernel).reshape(n, -1)
        elif spec.kind == MAX_POOL:
            cc, h, w = spec.in_shape
            kk = spec.pool
            idx = c
            gb = np.zeros(idx.shape + (kk * kk,))
            np.put_along_axis(gb, idx[..., None], g.reshape(idx.shape)[..., None], axis=-1)
            g = (gb.reshape(n, cc, h // kk, w // kk, kk, kk)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, -1))
        elif spec.kind == RELU:
            g = g * (x > 0)
        elif spec.kind == SIGMOID:
            s = acts.inputs[i + 1]
            g = g * s * (1.0 - s)
    grads.reverse()
    return grads


def evaluate(net: Network, features, labels, batch_size: int = 2000) -> float:
    """Top-1 error rate over a dataset."""
    labels = np.asarray(labels).reshape(-1)
    wrong = 0
    for start in range(0, labels.shape[0], batch_size):
        pred = predict(net, features[start:start + batch_size])
        wrong += int((pred != labels[start:start + batch_size]).sum())
    return wrong / max(labels.shape[0], 1)
