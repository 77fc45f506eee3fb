"""Data-oblivious primitives: Batcher sorting network, tag-sort shuffle, linear-scan ORAM.

The schedule of every primitive here depends on array lengths only. Values are
compared and swapped inside the enclave; the external trace of a sort is the
fixed list of compare-exchange positions, each logged as
``read i, read j, write i, write j`` whether or not the pair was swapped.
"""

from __future__ import annotations

from functools import lru_cache

import numba
import numpy as np

from .errors import BoundsError
from .extmem import READ, WRITE, ExternalArray, Memory

_INT64 = np.iinfo(np.int64)


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


@lru_cache(maxsize=64)
def batcher_network(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Comparators ``(lo, hi)`` of Batcher's odd-even mergesort on ``n = 2**p`` wires.

    Comparators are listed stage by stage; within a stage they are disjoint and
    in ascending order of ``lo``.
    """
    if n & (n - 1):
        raise ValueError(f"network size must be a power of two, got {n}")
    los, his = [], []
    a = np.arange(n, dtype=np.int64)
    p = 1
    while p < n:
        k = p
        while k >= 1:
            off = a - k % p
            sel = (off >= 0) & (off % (2 * k) < k) & (a + k < n) & (a // (2 * p) == (a + k) // (2 * p))
            lo = a[sel]
            los.append(lo)
            his.append(lo + k)
            k //= 2
        p *= 2
    if not los:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    lo, hi = np.concatenate(los), np.concatenate(his)
    lo.flags.writeable = False
    hi.flags.writeable = False
    return lo, hi


def batcher_size(n: int) -> int:
    """Comparator count of the network used for ``n`` wires (after padding)."""
    return len(batcher_network(next_pow2(n))[0])


@lru_cache(maxsize=16)
def _network_events(n: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = batcher_network(n)
    kinds = np.tile(np.array([READ, READ, WRITE, WRITE], dtype=np.uint8), len(lo))
    idx = np.stack([lo, hi, lo, hi], axis=1).ravel()
    return kinds, idx


def sort_event_count(n: int) -> int:
    """Trace length of :func:`oblivious_sort` on an ``n``-cell array."""
    if n <= 1:
        return 0
    p = next_pow2(n)
    network = 4 * batcher_size(p)
    if p == n:
        return network
    # copy in (2n), sentinel fill (p - n), network, copy back (2n)
    return 2 * n + (p - n) + network + 2 * n


def shuffle_event_count(n: int) -> int:
    """Trace length of :func:`oblivious_shuffle` on an ``n``-cell array."""
    if n <= 1:
        return 0
    return 2 * n + sort_event_count(n) + 2 * n


@numba.njit(cache=True)
def _apply_network(keys, perm, lo, hi):
    m = keys.shape[1]
    for c in range(lo.shape[0]):
        i = lo[c]
        j = hi[c]
        swap = False
        for col in range(m):
            a = keys[i, col]
            b = keys[j, col]
            if a < b:
                break
            if a > b:
                swap = True
                break
        if swap:
            for col in range(m):
                t = keys[i, col]
                keys[i, col] = keys[j, col]
                keys[j, col] = t
            t2 = perm[i]
            perm[i] = perm[j]
            perm[j] = t2


def _sentinel_row(arr: ExternalArray, sentinel) -> np.ndarray:
    if sentinel is not None:
        return np.asarray(sentinel, dtype=arr.peek().dtype)
    dtype = arr.peek().dtype
    top = np.inf if np.issubdtype(dtype, np.floating) else np.iinfo(dtype).max
    return np.full(arr.width, top, dtype=dtype)


def _run_network(work: ExternalArray, key_cols) -> None:
    n = work.length
    cells = work.peek()
    keys = np.ascontiguousarray(cells[:, list(key_cols)])
    perm = np.arange(n, dtype=np.int64)
    lo, hi = batcher_network(n)
    _apply_network(keys, perm, lo, hi)
    cells[:] = cells[perm]
    kinds, idx = _network_events(n)
    work.memory.emit(kinds, work.code, idx)


def oblivious_sort(arr: ExternalArray, key_cols=(0,), sentinel=None) -> None:
    """Sort ``arr`` in place by the lexicographic key formed from ``key_cols``.

    Non power-of-two lengths are copied into a scratch array padded with
    ``sentinel`` rows (default: maximal value in every column), sorted, and the
    first ``len(arr)`` cells copied back, so sentinels must compare above
    every real key.
    """
    n = arr.length
    if n <= 1:
        return
    mem = arr.memory
    p = next_pow2(n)
    with mem.private(2 * arr.width):
        if p == n:
            _run_network(arr, key_cols)
            return
        pad = mem.array(f"{arr.array_id}.pad", p, arr.width, arr.peek().dtype)
        head = np.arange(n, dtype=np.int64)
        mem.interleave((READ, arr, head), (WRITE, pad, head))
        pad.peek()[:n] = arr.peek()
        pad.write_many(np.arange(n, p), _sentinel_row(arr, sentinel))
        _run_network(pad, key_cols)
        mem.interleave((READ, pad, head), (WRITE, arr, head))
        arr.peek()[:] = pad.peek()[:n]


def oblivious_shuffle(arr: ExternalArray, rng: np.random.Generator, tie_col: int = 0) -> None:
    """Permute ``arr`` uniformly at random without revealing the permutation.

    Each cell gets a fresh 128-bit random tag (two int64 words) in a scratch
    array, the scratch array is obliviously sorted by ``(tag, cell[tie_col])``
    and the tags are dropped on the way back.
    """
    n = arr.length
    if n <= 1:
        return
    mem = arr.memory
    cells = arr.peek()
    tagged = mem.array(f"{arr.array_id}.tagged", n, arr.width + 2, cells.dtype)
    head = np.arange(n, dtype=np.int64)
    tags = rng.integers(_INT64.min, _INT64.max, size=(n, 2), dtype=np.int64, endpoint=True)
    with mem.private(arr.width + 2):
        mem.interleave((READ, arr, head), (WRITE, tagged, head))
        tagged.peek()[:, :2] = tags
        tagged.peek()[:, 2:] = cells
        oblivious_sort(tagged, key_cols=(0, 1, 2 + tie_col))
        mem.interleave((READ, tagged, head), (WRITE, arr, head))
        cells[:] = tagged.peek()[:, 2:]


class OramArray:
    """Linear-scan ORAM: every logical access reads and rewrites all ``k`` cells.

    Cell ``c`` is handled as ``read c, write c`` for ``c = 0 .. k-1``; the
    target index only decides, inside the enclave, which write carries a new
    value.
    """

    def __init__(self, memory: Memory, name: str, k: int, width: int = 1, dtype=np.int64, init=None):
        self.k = k
        self.backing = memory.array(name, k, width, dtype)
        fill = np.zeros((k, width), dtype=dtype) if init is None else np.asarray(init, dtype).reshape(k, width)
        self.backing.write_many(np.arange(k), fill)
        cells = np.arange(k, dtype=np.int64)
        self._kinds = np.tile(np.array([READ, WRITE], dtype=np.uint8), k)
        self._idx = np.repeat(cells, 2)

    def __len__(self) -> int:
        return self.k

    def _pass(self) -> None:
        self.backing.memory.emit(self._kinds, self.backing.code, self._idx)

    def _check(self, i: int) -> None:
        if not 0 <= i < self.k:
            raise BoundsError(f"ORAM index {i} outside [0, {self.k})")

    def read(self, i: int) -> np.ndarray:
        i = int(i)
        self._check(i)
        with self.backing.memory.private(2 * self.backing.width):
            self._pass()
            return self.backing.peek()[i].copy()

    def write(self, i: int, payload) -> None:
        i = int(i)
        self._check(i)
        with self.backing.memory.private(2 * self.backing.width):
            self._pass()
            self.backing.peek()[i] = payload


def oram_read(o: OramArray, i: int) -> np.ndarray:
    return o.read(i)


def oram_write(o: OramArray, i: int, payload) -> None:
    o.write(i, payload)
