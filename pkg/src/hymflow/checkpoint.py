"""Binary checkpoints.

Layout (little-endian): magic ``HYMF``, u32 version, u32 n, u32 N, u32 rank,
``rank*n`` i64 fluxes, then named blocks until end of file.  A block is a
u32 name length, the UTF-8 name, a u32 ndim, ``ndim`` u64 dims and the
row-major complex128 data with real and imaginary parts interleaved.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .bundle import BundleState, ConnectionState
from .geometry import GridGeometry, MetricField, build_torus_geometry

MAGIC = b"HYMF"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptHeader(CheckpointError):
    pass


class ShapeMismatch(CheckpointError):
    pass


class UnknownVersion(CheckpointError):
    pass


@dataclass
class Checkpoint:
    state: BundleState | ConnectionState
    metric: MetricField
    t: float

    @property
    def geom(self) -> GridGeometry:
        return self.state.geom


def _block(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<c16")
    enc = name.encode()
    head = struct.pack("<I", len(enc)) + enc + struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + data.tobytes()


def encode_checkpoint(state, metric: MetricField, t: float = 0.0) -> bytes:
    geom = state.geom
    fl = np.asarray(state.fluxes, dtype="<i8")
    out = [MAGIC, struct.pack("<4I", VERSION, geom.n, geom.N, state.rank), fl.tobytes()]
    out.append(_block("t", np.array([t])))
    out.append(_block("periods", np.asarray(geom.periods)))
    out.append(_block("g", metric.g))
    out.append(_block("a", state.a))
    if isinstance(state, BundleState):
        out.append(_block("H", state.H))
    out.append(_block("H0", state.H0))
    return b"".join(out)


def write_checkpoint(path, state, metric: MetricField, t: float = 0.0) -> None:
    """Write atomically: temporary file in the target directory, then rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(encode_checkpoint(state, metric, t))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, nbytes: int, what: str) -> bytes:
        if self.pos + nbytes > len(self.data):
            raise CorruptHeader(f"truncated checkpoint while reading {what}")
        chunk = self.data[self.pos:self.pos + nbytes]
        self.pos += nbytes
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def decode_checkpoint(data: bytes, expect: GridGeometry | None = None) -> Checkpoint:
    rd = _Reader(data)
    if rd.take(4, "magic") != MAGIC:
        raise CorruptHeader("bad magic")
    version, n, N, rank = rd.unpack("<4I", "header")
    if version != VERSION:
        raise UnknownVersion(f"checkpoint version {version} is not supported")
    if n not in (1, 2) or N < 8 or N & (N - 1) or rank < 1:
        raise CorruptHeader(f"implausible header n={n} N={N} rank={rank}")
    if expect is not None and (expect.n, expect.N) != (n, N):
        raise ShapeMismatch(f"checkpoint has n={n}, N={N}; expected n={expect.n}, N={expect.N}")
    fluxes = np.frombuffer(rd.take(8 * rank * n, "fluxes"), dtype="<i8").reshape(rank, n).astype(np.int64)
    blocks = {}
    while not rd.done:
        (ln,) = rd.unpack("<I", "block name length")
        name = rd.take(ln, "block name").decode(errors="replace")
        (ndim,) = rd.unpack("<I", "block rank")
        if ndim > 16:
            raise CorruptHeader(f"block {name!r} has implausible ndim {ndim}")
        dims = rd.unpack(f"<{ndim}Q", "block dims")
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(rd.take(16 * count, f"block {name!r}"), dtype="<c16").reshape(dims)
        blocks[name] = arr.astype(np.complex128)
    for need in ("t", "periods", "g", "a", "H0"):
        if need not in blocks:
            raise CorruptHeader(f"missing block {need!r}")
    periods = np.real(blocks["periods"])
    if periods.shape != (2 * n,):
        raise ShapeMismatch(f"periods block has shape {periods.shape}")
    geom = build_torus_geometry(n, N, list(periods))
    grid = geom.shape
    expected = {"g": grid + (n, n), "a": (n,) + grid + (rank, rank), "H0": grid + (rank, rank),
                "H": grid + (rank, rank)}
    for name, shape in expected.items():
        if name in blocks and blocks[name].shape != shape:
            raise ShapeMismatch(f"block {name!r} has shape {blocks[name].shape}, expected {shape}")
    metric = MetricField(geom, blocks["g"])
    if "H" in blocks:
        state = BundleState(geom, blocks["a"], fluxes, blocks["H"], blocks["H0"])
    else:
        state = ConnectionState(geom, blocks["a"], fluxes, blocks["H0"])
    return Checkpoint(state, metric, float(np.real(blocks["t"][0])))


def read_checkpoint(path, expect: GridGeometry | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), expect)


def checkpoint_roundtrip(state, metric: MetricField, t: float = 0.0):
    """Encode then decode in memory; returns the reconstructed state."""
    return decode_checkpoint(encode_checkpoint(state, metric, t)).state


__all__ = ["Checkpoint", "CheckpointError", "CorruptHeader", "ShapeMismatch", "UnknownVersion",
           "checkpoint_roundtrip", "decode_checkpoint", "encode_checkpoint", "read_checkpoint",
           "write_checkpoint"]
