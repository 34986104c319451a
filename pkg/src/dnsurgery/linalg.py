"""Dense float64 arithmetic and convolution lowering.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 stored in
row-major (C) order.  A convolution layer keeps its kernels as a single
weight matrix with one row per output channel and columns ordered
``(in_channel, kernel_row, kernel_col)``; :func:`im2col` produces the
matching column layout so that a convolution is one matrix product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "KernelSpec",
    "abs_stats",
    "as_matrix",
    "col2im_batch",
    "conv_output_size",
    "hadamard",
    "im2col",
    "im2col_batch",
    "matmul",
]


@dataclass(frozen=True)
class KernelSpec:
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        for field in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, field) < 1:
                raise ShapeError(f"KernelSpec.{field} must be positive, got {getattr(self, field)}")
        if self.pad < 0:
            raise ShapeError(f"KernelSpec.pad must be >= 0, got {self.pad}")

    @property
    def patch_size(self) -> int:
        """Number of weights in one unfolded kernel (columns of the weight matrix)."""
        return self.in_channels * self.kernel_h * self.kernel_w


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def conv_output_size(h: int, w: int, spec: KernelSpec) -> tuple[int, int]:
    out_h = (h + 2 * spec.pad - spec.kernel_h) // spec.stride + 1
    out_w = (w + 2 * spec.pad - spec.kernel_w) // spec.stride + 1
    if h + 2 * spec.pad < spec.kernel_h or w + 2 * spec.pad < spec.kernel_w:
        raise ShapeError(
            f"kernel {spec.kernel_h}x{spec.kernel_w} does not fit a {h}x{w} input with pad {spec.pad}"
        )
    return out_h, out_w


def im2col_batch(x: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Unfold a batch ``(N, C, H, W)`` into a ``(C*kh*kw, N*out_h*out_w)`` matrix.

    Columns are ordered sample-major, then output row, then output column.
    """
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"expected (N, {spec.in_channels}, H, W) input, got {x.shape}")
    n, c, h, w = x.shape
    out_h, out_w = conv_output_size(h, w, spec)
    if spec.pad:
        p = spec.pad
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (spec.kernel_h, spec.kernel_w), axis=(2, 3))
    win = win[:, :, :: spec.stride, :: spec.stride][:, :, :out_h, :out_w]
    # (N, C, oh, ow, kh, kw) -> (C, kh, kw, N, oh, ow)
    cols = win.transpose(1, 4, 5, 0, 2, 3)
    return np.ascontiguousarray(cols).reshape(spec.patch_size, n * out_h * out_w)


def col2im_batch(cols: np.ndarray, x_shape: tuple[int, int, int, int], spec: KernelSpec) -> np.ndarray:
    """Adjoint of :func:`im2col_batch`: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    out_h, out_w = conv_output_size(h, w, spec)
    kh, kw, s, p = spec.kernel_h, spec.kernel_w, spec.stride, spec.pad
    cols = cols.reshape(c, kh, kw, n, out_h, out_w).transpose(3, 0, 1, 2, 4, 5)
    img = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for i in range(kh):
        for j in range(kw):
            img[:, :, i : i + s * out_h : s, j : j + s * out_w : s] += cols[:, :, i, j]
    if p:
        img = img[:, :, p : p + h, p : p + w]
    return img


def im2col(image, spec: KernelSpec) -> np.ndarray:
    """Unfold a single ``H x W x C`` image into ``(C*kh*kw, out_h*out_w)``.

    Multiplying the unfolded weight matrix ``(out_channels, C*kh*kw)`` by the
    result gives the convolution output with one column per spatial position.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ShapeError(f"expected an H x W x C image, got shape {image.shape}")
    return im2col_batch(image.transpose(2, 0, 1)[None], spec)


def abs_stats(w) -> tuple[float, float]:
    """Mean and population standard deviation of ``|w|``."""
    a = np.abs(np.asarray(w, dtype=np.float64))
    if a.size == 0:
        raise ValueError("abs_stats of an empty matrix is undefined")
    return float(a.mean()), float(a.std())
