"""Binary checkpoint-store files.

Layout (all integers little-endian)::

    b"CESCKPT1"
    u32 layer_count, then layer_count x u32 layer sizes
    u32 loss tag, f64 loss param 0, f64 loss param 1
    u32 tau, u32 t_max, u32 checkpoint count
    per checkpoint: u32 epoch, n_weights x f64
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .losses import loss_from_tag

MAGIC = b"CESCKPT1"
_CHUNK = 1 << 20


class StoreFormatError(ValueError):
    pass


class StoreVersionError(StoreFormatError):
    pass


class StoreTruncatedError(StoreFormatError):
    pass


class StoreChecksumError(StoreFormatError):
    pass


def _header_bytes(spec, loss, tau, t_max, count):
    sizes = spec.layer_sizes
    p0, p1 = loss.params()
    return b"".join([
        MAGIC,
        struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes),
        struct.pack("<Idd", loss.tag, p0, p1),
        struct.pack("<III", tau, t_max, count),
    ])


def _record_dtype(n_weights):
    return np.dtype([("epoch", "<u4"), ("w", "<f8", (n_weights,))])


class StoreWriter:
    """Streams checkpoints to disk as training progresses."""

    def __init__(self, path, spec, loss, tau, t_max, count):
        self.path = os.fspath(path)
        self.spec = spec
        self.count = count
        self.written = 0
        self._fh = open(self.path, "wb")
        self._crc = 0
        self._write(_header_bytes(spec, loss, tau, t_max, count))

    def _write(self, data):
        self._crc = zlib.crc32(data, self._crc)
        self._fh.write(data)

    def append(self, epoch, weights):
        if self.written >= self.count:
            raise ValueError("store already holds its declared number of checkpoints")
        weights = np.ascontiguousarray(weights, dtype="<f8")
        if weights.shape != (self.spec.n_weights,):
            raise ValueError("weight vector does not match the network spec")
        self._write(struct.pack("<I", epoch) + weights.tobytes())
        self.written += 1

    def close(self):
        if self.written != self.count:
            self.abort()
            raise ValueError(f"wrote {self.written} of {self.count} checkpoints")
        self._fh.write(struct.pack("<I", self._crc))
        self._fh.close()

    def abort(self):
        if not self._fh.closed:
            self._fh.close()
        if os.path.exists(self.path):
            os.remove(self.path)


def save_store(store, path):
    writer = StoreWriter(path, store.spec, store.loss, store.tau, store.t_max, len(store))
    try:
        for epoch, w in zip(store.epochs, store.weights):
            writer.append(int(epoch), w)
    except BaseException:
        writer.abort()
        raise
    writer.close()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise StoreTruncatedError("checkpoint file is truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out


def _parse_header(head):
    from .network import NetworkSpec

    if head[:len(MAGIC)] != MAGIC:
        if len(head) < len(MAGIC):
            raise StoreTruncatedError("checkpoint file is truncated")
        raise StoreVersionError(f"bad magic {bytes(head[:len(MAGIC)])!r}, expected {MAGIC!r}")
    r = _Reader(head)
    r.pos = len(MAGIC)
    (n_layers,) = r.take("<I")
    if n_layers < 2 or n_layers > 4096:
        raise StoreFormatError(f"implausible layer count {n_layers}")
    sizes = r.take(f"<{n_layers}I")
    tag, p0, p1 = r.take("<Idd")
    tau, t_max, count = r.take("<III")
    spec = NetworkSpec(sizes)
    return spec, loss_from_tag(tag, p0, p1), tau, t_max, count, r.pos


def load_store(path, mmap=False):
    """Read a checkpoint file, verifying length and CRC32.

    With ``mmap=True`` the weights stay on disk behind a read-only memory map.
    """
    from .network import CheckpointStore

    path = os.fspath(path)
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(min(size, 64 + 4 * 4096))
    spec, loss, tau, t_max, count, offset = _parse_header(head)
    dtype = _record_dtype(spec.n_weights)
    expected = offset + count * dtype.itemsize + 4
    if size < expected:
        raise StoreTruncatedError(f"checkpoint file is truncated ({size} < {expected} bytes)")
    if size > expected:
        raise StoreFormatError(f"{size - expected} trailing bytes after checksum")

    crc = 0
    with open(path, "rb") as fh:
        remaining = expected - 4
        while remaining:
            chunk = fh.read(min(_CHUNK, remaining))
            crc = zlib.crc32(chunk, crc)
            remaining -= len(chunk)
        (stored,) = struct.unpack("<I", fh.read(4))
    if crc != stored:
        raise StoreChecksumError(f"CRC mismatch: stored {stored:#010x}, computed {crc:#010x}")

    if mmap:
        records = np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=(count,))
        weights = records["w"]
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            records = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
        weights = records["w"].astype(np.float64)
    epochs = records["epoch"].astype(np.int64)
    return CheckpointStore(spec, loss, tau, t_max, epochs, weights)
