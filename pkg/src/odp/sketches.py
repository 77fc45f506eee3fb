"""Streaming summaries kept entirely in enclave (private) memory.

* :class:`KmvSketch` -- bottom-t ("k minimum values") distinct counter.
* :class:`CountMinSketch` -- count-min frequency table.

Hashing uses the splitmix64 finaliser over ``item XOR seed``; KMV maps the
top 53 bits to a double in [0, 1). Only the statistical quality of the hash is
relied upon.

Both sketches serialize to a small versioned binary blob::

    magic  b"ODPS"            4 bytes
    version                  u16   (currently 1)
    kind                     u8    (1 = KMV, 2 = count-min)
    dtype                    u8    (0 = int64 counters, 1 = float64 counters)
    KMV:  capacity u64, seed u64, saturated u8, size u64, size * f64 hashes
    CM:   width u64, depth u64, depth * u64 row seeds, depth*width counters

All integers are little-endian.
"""

from __future__ import annotations

import math
import struct

import numpy as np

MAGIC = b"ODPS"
VERSION = 1
_KIND_KMV = 1
_KIND_CM = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(items, seed: int) -> np.ndarray:
    """splitmix64 finaliser of ``items ^ seed`` (vectorised, uint64)."""
    z = np.asarray(items).astype(np.int64).view(np.uint64) ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def unit_hash(items, seed: int) -> np.ndarray:
    """Hash to doubles in [0, 1)."""
    return (mix64(items, seed) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def kmv_capacity(alpha: float) -> int:
    return math.ceil(3.0 / alpha**2)


class KmvSketch:
    """Keeps the ``capacity`` smallest distinct hash values seen so far.

    ``saturated`` flips once a distinct hash has been turned away; before
    that the sketch holds every distinct hash and its estimate is exact.
    """

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 2:
            raise ValueError("KMV capacity must be at least 2")
        self.capacity = capacity
        self.seed = seed
        self.saturated = False
        self._hashes = np.empty(0, dtype=np.float64)

    @classmethod
    def for_accuracy(cls, alpha: float, seed: int = 0) -> KmvSketch:
        return cls(kmv_capacity(alpha), seed)

    @property
    def hashes(self) -> np.ndarray:
        return self._hashes

    def words(self) -> int:
        return self.capacity + 3

    def update(self, item) -> None:
        h = unit_hash(np.array([item]), self.seed)[0]
        pos = np.searchsorted(self._hashes, h)
        if pos < len(self._hashes) and self._hashes[pos] == h:
            return
        if len(self._hashes) < self.capacity:
            self._hashes = np.insert(self._hashes, pos, h)
        elif pos < self.capacity:
            self._hashes = np.insert(self._hashes, pos, h)[: self.capacity]
            self.saturated = True
        else:
            self.saturated = True

    def update_many(self, items) -> None:
        """Same final state as calling :meth:`update` on each item in turn."""
        h = np.concatenate([self._hashes, unit_hash(items, self.seed)])
        h = np.unique(h)
        if len(h) > self.capacity:
            self.saturated = True
            h = h[: self.capacity]
        self._hashes = h

    def estimate(self) -> float:
        if not self.saturated:
            return float(len(self._hashes))
        return (self.capacity - 1) / self._hashes[-1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, KmvSketch):
            return NotImplemented
        return (
            self.capacity == other.capacity
            and self.seed == other.seed
            and self.saturated == other.saturated
            and np.array_equal(self._hashes, other._hashes)
        )

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<4sHBBQQBQ",
            MAGIC,
            VERSION,
            _KIND_KMV,
            1,
            self.capacity,
            self.seed & 0xFFFFFFFFFFFFFFFF,
            int(self.saturated),
            len(self._hashes),
        )
        return head + self._hashes.astype("<f8").tobytes()


def kmv_update(s: KmvSketch, item) -> None:
    s.update(item)


def kmv_estimate(s: KmvSketch) -> float:
    return s.estimate()


def count_min_shape(alpha: float, theta: float) -> tuple[int, int]:
    """``(width, depth) = (ceil(e / alpha), ceil(ln(1 / theta)))``."""
    return math.ceil(math.e / alpha), max(1, math.ceil(math.log(1.0 / theta)))


class CountMinSketch:
    """``depth x width`` counter table; a point query is the row-wise minimum."""

    def __init__(self, width: int, depth: int, seed: int = 0, *, table=None, row_seeds=None):
        if width < 1 or depth < 1:
            raise ValueError("count-min width and depth must be positive")
        self.width = width
        self.depth = depth
        if row_seeds is None:
            row_seeds = np.random.default_rng(seed).integers(0, 2**63, size=depth, dtype=np.int64)
        self.row_seeds = np.asarray(row_seeds, dtype=np.int64)
        self.table = np.zeros((depth, width), dtype=np.int64) if table is None else np.asarray(table)

    @classmethod
    def for_accuracy(cls, alpha: float, theta: float, seed: int = 0) -> CountMinSketch:
        w, d = count_min_shape(alpha, theta)
        return cls(w, d, seed)

    def words(self) -> int:
        return self.width * self.depth + self.depth + 2

    def columns(self, items) -> np.ndarray:
        """Column hit by each item in each row, shape ``(depth, len(items))``."""
        items = np.atleast_1d(np.asarray(items))
        return np.stack([(mix64(items, int(s)) % np.uint64(self.width)).astype(np.int64) for s in self.row_seeds])

    def update(self, item, count: int = 1) -> None:
        cols = self.columns([item])[:, 0]
        self.table[np.arange(self.depth), cols] += count

    def update_many(self, items) -> None:
        cols = self.columns(items)
        for r in range(self.depth):
            self.table[r] += np.bincount(cols[r], minlength=self.width).astype(self.table.dtype)

    def query(self, item):
        return self.query_many([item])[0]

    def query_many(self, items) -> np.ndarray:
        cols = self.columns(items)
        return self.table[np.arange(self.depth)[:, None], cols].min(axis=0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountMinSketch):
            return NotImplemented
        return (
            self.width == other.width
            and self.depth == other.depth
            and np.array_equal(self.row_seeds, other.row_seeds)
            and np.array_equal(self.table, other.table)
        )

    def to_bytes(self) -> bytes:
        is_float = np.issubdtype(self.table.dtype, np.floating)
        head = struct.pack("<4sHBBQQ", MAGIC, VERSION, _KIND_CM, int(is_float), self.width, self.depth)
        body = self.table.astype("<f8" if is_float else "<i8").tobytes()
        return head + self.row_seeds.astype("<u8").tobytes() + body


def cm_update(c: CountMinSketch, item) -> None:
    c.update(item)


def cm_query(c: CountMinSketch, item):
    return c.query(item)


def sketch_from_bytes(blob: bytes) -> KmvSketch | CountMinSketch:
    magic, version, kind, dtype_flag = struct.unpack_from("<4sHBB", blob, 0)
    if magic != MAGIC:
        raise ValueError("not a sketch blob")
    if version != VERSION:
        raise ValueError(f"unsupported sketch blob version {version}")
    off = struct.calcsize("<4sHBB")
    if kind == _KIND_KMV:
        capacity, seed, saturated, size = struct.unpack_from("<QQBQ", blob, off)
        off += struct.calcsize("<QQBQ")
        s = KmvSketch(capacity, seed)
        s.saturated = bool(saturated)
        s._hashes = np.frombuffer(blob, dtype="<f8", count=size, offset=off).astype(np.float64)
        return s
    if kind == _KIND_CM:
        width, depth = struct.unpack_from("<QQ", blob, off)
        off += 16
        seeds = np.frombuffer(blob, dtype="<u8", count=depth, offset=off).astype(np.int64)
        off += 8 * depth
        dt = "<f8" if dtype_flag else "<i8"
        table = np.frombuffer(blob, dtype=dt, count=depth * width, offset=off)
        table = table.astype(np.float64 if dtype_flag else np.int64).reshape(depth, width)
        return CountMinSketch(width, depth, table=table, row_seeds=seeds)
    raise ValueError(f"unknown sketch kind {kind}")
