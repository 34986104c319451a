"""Model serialization and compression accounting.

Two little-endian binary formats are supported.

``DNSD`` (dense) stores everything needed to resume work on a masked
network::

    b"DNSD" | u16 version | u32 layer count | layer records...

    layer record:
        u16 name length | utf-8 name | u8 kind tag | u32 input_dim | u32 output_dim
        convolution: u32 in_c, in_h, in_w, out_c, kernel_h, kernel_w, stride, pad
        max_pool:    u32 in_c, in_h, in_w, pool
        learnable:   u8 has_bias | f64[rows*cols] weights (row-major) | f64[bias] bias
                     | mask bits, row-major, MSB first, padded to a whole byte
                     | f64 c, band_lo, band_hi, a, b | u8 frozen

``DNSS`` (sparse) has the same header and layer records, except that a
learnable layer stores its surviving weights in CSR form::

        u8 has_bias | u32 rows | u32 cols | u32 nnz | u32[rows+1] row_ptr
        | u32[nnz] col_idx | f64[nnz] values | f64[bias] bias

Only entries with mask 1 and a nonzero weight are written, so the dense
reconstruction equals ``W * T`` exactly.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import FormatError, TruncatedError, VersionError
from .linalg import KernelSpec
from .network import (
    CONVOLUTION, FULLY_CONNECTED, MAX_POOL, RELU, SIGMOID, SIGMOID_XENT, SOFTMAX_XENT,
    LayerSpec, Network,
)
from .params import MaskedParams, ThresholdSpec

DENSE_MAGIC = b"DNSD"
SPARSE_MAGIC = b"DNSS"
FORMAT_VERSION = 1

KIND_TAGS = {
    FULLY_CONNECTED: 0,
    CONVOLUTION: 1,
    MAX_POOL: 2,
    SIGMOID: 3,
    RELU: 4,
    SOFTMAX_XENT: 5,
    SIGMOID_XENT: 6,
}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


# -- low level ---------------------------------------------------------------

class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"unexpected end of file at byte {self.pos}: need {n} more bytes, {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt, count=count).copy()


def _write_header(out: io.BytesIO, magic: bytes, n_layers: int):
    out.write(magic)
    out.write(struct.pack("<HI", FORMAT_VERSION, n_layers))


def _read_header(r: _Reader, magic: bytes) -> int:
    got = bytes(r.take(4))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version, n_layers = r.unpack("HI")
    if version != FORMAT_VERSION:
        raise VersionError(f"file format version {version}, this reader understands {FORMAT_VERSION}")
    return n_layers


def _write_spec(out: io.BytesIO, spec: LayerSpec):
    name = spec.name.encode("utf-8")
    out.write(struct.pack("<H", len(name)))
    out.write(name)
    out.write(struct.pack("<BII", KIND_TAGS[spec.kind], spec.input_dim, spec.output_dim))
    if spec.kind == CONVOLUTION:
        k = spec.kernel
        out.write(struct.pack("<8I", *spec.in_shape, k.out_channels, k.kernel_h, k.kernel_w, k.stride, k.pad))
    elif spec.kind == MAX_POOL:
        out.write(struct.pack("<4I", *spec.in_shape, spec.pool))
    if spec.learnable:
        out.write(struct.pack("<B", int(spec.has_bias)))


def _read_spec(r: _Reader) -> LayerSpec:
    (n,) = r.unpack("H")
    name = bytes(r.take(n)).decode("utf-8")
    tag, din, dout = r.unpack("BII")
    if tag not in TAG_KINDS:
        raise FormatError(f"unknown layer kind tag {tag}")
    kind = TAG_KINDS[tag]
    if kind == CONVOLUTION:
        c, h, w, oc, kh, kw, s, p = r.unpack("8I")
        (has_bias,) = r.unpack("B")
        return LayerSpec(kind, din, dout, name=name, kernel=KernelSpec(c, oc, kh, kw, s, p),
                         in_shape=(c, h, w), has_bias=bool(has_bias))
    if kind == MAX_POOL:
        c, h, w, pool = r.unpack("4I")
        return LayerSpec(kind, din, dout, name=name, in_shape=(c, h, w), pool=pool)
    if kind == FULLY_CONNECTED:
        (has_bias,) = r.unpack("B")
        return LayerSpec(kind, din, dout, name=name, has_bias=bool(has_bias))
    return LayerSpec(kind, din, dout, name=name)


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


# -- dense -------------------------------------------------------------------

def save_dense(net: Network) -> bytes:
    out = io.BytesIO()
    _write_header(out, DENSE_MAGIC, len(net.specs))
    k = 0
    for spec in net.specs:
        _write_spec(out, spec)
        if not spec.learnable:
            continue
        p, b = net.params[k], net.biases[k]
        k += 1
        out.write(_f64(p.w))
        if b is not None:
            out.write(_f64(b))
        out.write(np.packbits(p.t.reshape(-1) == 1.0).tobytes())
        th = p.thresholds
        out.write(struct.pack("<5dB", th.c, th.band_lo, th.band_hi, th.a, th.b, int(th.frozen)))
    return out.getvalue()


def load_dense(buf: bytes) -> Network:
    r = _Reader(buf)
    n_layers = _read_header(r, DENSE_MAGIC)
    specs, params, biases = [], [], []
    for _ in range(n_layers):
        spec = _read_spec(r)
        specs.append(spec)
        if not spec.learnable:
            continue
        rows, cols = spec.weight_shape
        w = r.array("<f8", rows * cols).astype(np.float64).reshape(rows, cols)
        b = r.array("<f8", spec.bias_size).astype(np.float64) if spec.has_bias else None
        bits = r.array("u1", (rows * cols + 7) // 8)
        t = np.unpackbits(bits, count=rows * cols).astype(np.float64).reshape(rows, cols)
        c, lo, hi, a, bb, frozen = r.unpack("5dB")
        params.append(MaskedParams(w, t, ThresholdSpec(c, lo, hi, a, bb, bool(frozen))))
        biases.append(b)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after the last layer")
    return Network(specs, params, biases)


# -- sparse ------------------------------------------------------------------

@dataclass
class CSRMatrix:
    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    @classmethod
    def from_masked(cls, w: np.ndarray, t: np.ndarray) -> "CSRMatrix":
        keep = (t == 1.0) & (w != 0.0)
        r, c = np.nonzero(keep)
        counts = np.bincount(r, minlength=w.shape[0])
        row_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.uint32)
        return cls(w.shape[0], w.shape[1], row_ptr, c.astype(np.uint32), w[keep].astype(np.float64))

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        counts = np.diff(self.row_ptr.astype(np.int64))
        out[np.repeat(np.arange(self.rows), counts), self.col_idx.astype(np.int64)] = self.values
        return out

    def validate(self):
        rp = self.row_ptr.astype(np.int64)
        if rp.shape != (self.rows + 1,) or rp[0] != 0 or rp[-1] != self.nnz or np.any(np.diff(rp) < 0):
            raise FormatError("CSR row pointers are inconsistent")
        if self.col_idx.shape != (self.nnz,) or (self.nnz and self.col_idx.max() >= self.cols):
            raise FormatError("CSR column index out of range")
        ci = self.col_idx.astype(np.int64)
        for i in range(self.rows):
            if np.any(np.diff(ci[rp[i]:rp[i + 1]]) <= 0):
                raise FormatError(f"CSR column indices in row {i} are not strictly increasing")


@dataclass
class SparseModel:
    specs: list[LayerSpec]
    weights: list[CSRMatrix]
    biases: list[np.ndarray | None]

    def to_network(self) -> Network:
        params = []
        for m in self.weights:
            dense = m.to_dense()
            t = np.zeros_like(dense)
            counts = np.diff(m.row_ptr.astype(np.int64))
            t[np.repeat(np.arange(m.rows), counts), m.col_idx.astype(np.int64)] = 1.0
            params.append(MaskedParams(dense, t, ThresholdSpec()))
        return Network(list(self.specs), params, [None if b is None else b.copy() for b in self.biases])


def export_sparse(net: Network) -> SparseModel:
    return SparseModel(
        list(net.specs),
        [CSRMatrix.from_masked(p.w, p.t) for p in net.params],
        [None if b is None else b.copy() for b in net.biases],
    )


def save_sparse(model: SparseModel) -> bytes:
    out = io.BytesIO()
    _write_header(out, SPARSE_MAGIC, len(model.specs))
    k = 0
    for spec in model.specs:
        _write_spec(out, spec)
        if not spec.learnable:
            continue
        m, b = model.weights[k], model.biases[k]
        k += 1
        out.write(struct.pack("<3I", m.rows, m.cols, m.nnz))
        out.write(np.ascontiguousarray(m.row_ptr, dtype="<u4").tobytes())
        out.write(np.ascontiguousarray(m.col_idx, dtype="<u4").tobytes())
        out.write(_f64(m.values))
        if b is not None:
            out.write(_f64(b))
    return out.getvalue()


def load_sparse(buf: bytes) -> SparseModel:
    r = _Reader(buf)
    n_layers = _read_header(r, SPARSE_MAGIC)
    specs, weights, biases = [], [], []
    for _ in range(n_layers):
        spec = _read_spec(r)
        specs.append(spec)
        if not spec.learnable:
            continue
        rows, cols, nnz = r.unpack("3I")
        if (rows, cols) != spec.weight_shape:
            raise FormatError(f"layer {spec.name!r}: CSR shape {(rows, cols)} != {spec.weight_shape}")
        row_ptr = r.array("<u4", rows + 1).astype(np.uint32)
        col_idx = r.array("<u4", nnz).astype(np.uint32)
        values = r.array("<f8", nnz).astype(np.float64)
        m = CSRMatrix(rows, cols, row_ptr, col_idx, values)
        m.validate()
        weights.append(m)
        biases.append(r.array("<f8", spec.bias_size).astype(np.float64) if spec.has_bias else None)
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes after the last layer")
    return SparseModel(specs, weights, biases)


def read_model(path) -> Network:
    """Load either format, dispatching on the magic bytes."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] == SPARSE_MAGIC:
        return load_sparse(buf).to_network()
    return load_dense(buf)


def write_bytes(path, payload: bytes):
    with open(path, "wb") as f:
        f.write(payload)


# -- compression report -------------------------------------------------------

@dataclass(frozen=True)
class LayerStats:
    name: str
    total: int
    kept: int

    @property
    def percent(self) -> float:
        return 100.0 * self.kept / self.total if self.total else 100.0


@dataclass(frozen=True)
class CompressionReport:
    layers: tuple[LayerStats, ...]

    @property
    def total(self) -> int:
        return sum(s.total for s in self.layers)

    @property
    def kept(self) -> int:
        return sum(s.kept for s in self.layers)

    @property
    def percent(self) -> float:
        return 100.0 * self.kept / self.total if self.total else 100.0

    @property
    def kept_fraction(self) -> float:
        return self.kept / self.total if self.total else 1.0

    @property
    def rate(self) -> Fraction | float:
        """``total / kept`` as an exact fraction (infinite when nothing is kept)."""
        return Fraction(self.total, self.kept) if self.kept else math.inf

    def to_csv(self) -> str:
        lines = ["layer,total,kept,percent"]
        for s in self.layers:
            lines.append(f"{s.name},{s.total},{s.kept},{s.percent:.4f}")
        lines.append(f"total,{self.total},{self.kept},{self.percent:.4f}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        width = max([len(s.name) for s in self.layers] + [5])
        rows = [f"{'layer':<{width}}  {'params':>10}  {'kept':>10}  {'kept %':>8}"]
        for s in self.layers:
            rows.append(f"{s.name:<{width}}  {s.total:>10}  {s.kept:>10}  {s.percent:>7.2f}%")
        rows.append(f"{'total':<{width}}  {self.total:>10}  {self.kept:>10}  {self.percent:>7.2f}%")
        rows.append(f"compression: {float(self.rate):.2f}x")
        return "\n".join(rows)


def compression_report(net: Network, include_biases: bool = True) -> CompressionReport:
    """Per-layer parameter counts; biases are never pruned, so they count as kept."""
    stats = []
    for spec, p, b in zip(net.learnable_specs, net.params, net.biases):
        nb = 0 if (b is None or not include_biases) else b.shape[0]
        stats.append(LayerStats(spec.name, p.w.size + nb, p.kept + nb))
    return CompressionReport(tuple(stats))
