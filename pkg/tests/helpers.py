"""Shared builders and oracles for the test suite."""

import os

import numpy as np

from dnsurgery.network import (
    RELU, SIGMOID, Network, activation, convolution, forward, fully_connected, init_network,
    max_pool, sigmoid_xent_loss, softmax_xent_loss,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN_IMAGES = os.path.join(FIXTURES, "golden-images-idx3-ubyte")
GOLDEN_LABELS = os.path.join(FIXTURES, "golden-labels-idx1-ubyte")


def mlp_specs(sizes, act=SIGMOID, loss="softmax"):
    specs = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        specs.append(fully_connected(f"fc{i + 1}", a, b))
        if i < len(sizes) - 2:
            specs.append(activation(act, b))
    specs.append(softmax_xent_loss(sizes[-1]) if loss == "softmax" else sigmoid_xent_loss())
    return specs


def tiny_conv_specs():
    conv = convolution("conv1", (1, 5, 5), 2, 2)
    pool = max_pool(conv.out_shape, 2)
    return [conv, pool, activation(SIGMOID, pool.output_dim),
            fully_connected("fc1", pool.output_dim, 2), softmax_xent_loss(2)]


def random_masks(net: Network, rng, keep=0.6):
    for p in net.params:
        p.t = (rng.random(p.w.shape) < keep).astype(np.float64)
    for b in net.biases:
        if b is not None:
            b[:] = rng.standard_normal(b.shape) * 0.1
    return net


def unmasked_clone(net: Network) -> Network:
    """Same function as ``net`` with W replaced by W*T and an all-ones mask."""
    clone = net.copy()
    for p in clone.params:
        p.w = p.w * p.t
        p.t = np.ones_like(p.w)
    return clone


def finite_difference_grads(net: Network, x, y, h=1e-5):
    """Central differences of the loss w.r.t. every entry of every masked product and bias."""
    clone = unmasked_clone(net)
    loss = lambda: forward(clone, x, y).loss  # noqa: E731
    out = []
    for p, b in zip(clone.params, clone.biases):
        gw = np.zeros_like(p.w)
        for idx in np.ndindex(p.w.shape):
            old = p.w[idx]
            p.w[idx] = old + h
            up = loss()
            p.w[idx] = old - h
            down = loss()
            p.w[idx] = old
            gw[idx] = (up - down) / (2 * h)
        gb = None
        if b is not None:
            gb = np.zeros_like(b)
            for i in range(b.shape[0]):
                old = b[i]
                b[i] = old + h
                up = loss()
                b[i] = old - h
                down = loss()
                b[i] = old
                gb[i] = (up - down) / (2 * h)
        out.append((gw, gb))
    return out


def max_rel_error(a, n, floor=1e-8):
    a = np.asarray(a).ravel()
    n = np.asarray(n).ravel()
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def random_small_net(rng):
    """A random network with at most 50 parameters (weights + biases)."""
    kind = rng.integers(3)
    if kind == 0:
        while True:
            sizes = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(2, 4)))] + [int(rng.integers(2, 4))]
            n = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
            if n <= 50:
                break
        specs = mlp_specs(sizes, act=SIGMOID if rng.random() < 0.5 else RELU)
    elif kind == 1:
        specs = mlp_specs([int(rng.integers(1, 4)), int(rng.integers(1, 6)), 1], loss="sigmoid")
    else:
        specs = tiny_conv_specs()
    return init_network(specs, int(rng.integers(1 << 30)))


def brute_conv(image_hwc, weights, spec):
    """Nested-loop convolution; weights indexed [out_c, in_c, kr, kc]."""
    h, w, c = image_hwc.shape
    p = spec.pad
    padded = np.zeros((h + 2 * p, w + 2 * p, c))
    padded[p:p + h, p:p + w] = image_hwc
    oh = (h + 2 * p - spec.kernel_h) // spec.stride + 1
    ow = (w + 2 * p - spec.kernel_w) // spec.stride + 1
    out = np.zeros((spec.out_channels, oh, ow))
    for o in range(spec.out_channels):
        for y in range(oh):
            for x in range(ow):
                acc = 0.0
                for ci in range(c):
                    for kr in range(spec.kernel_h):
                        for kc in range(spec.kernel_w):
                            acc += weights[o, ci, kr, kc] * padded[y * spec.stride + kr, x * spec.stride + kc, ci]
                out[o, y, x] = acc
    return out


def golden_pixels():
    # pixel k of image n in the golden fixture is (31k + 97n) mod 256
    return np.array([[(31 * k + 97 * n) % 256 for k in range(784)] for n in range(2)]) / 255.0
