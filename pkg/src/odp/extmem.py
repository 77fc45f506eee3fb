"""Simulated untrusted memory of a trusted execution environment.

Every algorithm in this package keeps its bulk data in :class:`ExternalArray`
objects owned by a :class:`Memory`. Each cell access is logged as one
``(kind, array_id, index)`` event, which is exactly what an adversary probing
the memory bus observes: addresses and read/write direction, never contents.

Computations on values already pulled into the enclave are free and silent.
Their footprint is tracked separately (and only advisorily) by
:class:`PrivateMemoryMeter`.

Algorithms that process many cells with a fixed, data-independent schedule may
log that schedule in bulk (:meth:`Memory.emit`, :meth:`Memory.interleave`)
and update the cells with vectorised numpy code. The logged sequence is the
same one the scalar loop would have produced, event for event.
"""

from __future__ import annotations

import contextlib
import hashlib
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, TextIO

import numpy as np

from .errors import BoundsError, TraceFormatError

READ = 0
WRITE = 1
_KIND_CHAR = ("r", "w")
_CHAR_KIND = {"r": READ, "w": WRITE}

#: Documented constant ``c`` for the private-memory budget ``c * (ln n)**2``.
PRIVATE_MEMORY_C = 32


def polylog_capacity(n: int, c: float = PRIVATE_MEMORY_C) -> float:
    """Private-memory budget in words for an input of ``n`` records."""
    return c * math.log(max(n, 2)) ** 2


@dataclass(frozen=True)
class AccessEvent:
    seq: int
    kind: str
    array_id: str
    index: int

    def __str__(self) -> str:
        return f"{self.seq},{self.kind},{self.array_id},{self.index}"


class AccessTrace:
    """Ordered, payload-free log of external-memory accesses.

    Stored column-wise: ``kinds`` (0 read / 1 write), ``codes`` (index into
    ``names``) and ``indices``. The sequence number of an event is its
    position in the trace.
    """

    __slots__ = ("kinds", "codes", "indices", "names")

    def __init__(self, kinds, codes, indices, names: Iterable[str]):
        self.kinds = np.asarray(kinds, dtype=np.uint8)
        self.codes = np.asarray(codes, dtype=np.int32)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.names = tuple(names)
        if not (len(self.kinds) == len(self.codes) == len(self.indices)):
            raise ValueError("trace columns differ in length")

    @classmethod
    def empty(cls) -> AccessTrace:
        return cls([], [], [], ())

    def __len__(self) -> int:
        return len(self.kinds)

    def __getitem__(self, seq: int) -> AccessEvent:
        if seq < 0:
            seq += len(self)
        return AccessEvent(
            seq,
            _KIND_CHAR[self.kinds[seq]],
            self.names[self.codes[seq]],
            int(self.indices[seq]),
        )

    def __iter__(self) -> Iterator[AccessEvent]:
        for seq in range(len(self)):
            yield self[seq]

    def __repr__(self) -> str:
        return f"AccessTrace({len(self)} events, arrays={list(self.names)})"

    def _name_column(self) -> np.ndarray:
        table = np.array(self.names + ("",), dtype=object)
        return table[self.codes] if len(self) else np.array([], dtype=object)

    def first_divergence(self, other: AccessTrace) -> int | None:
        """Sequence number of the first differing event, or ``None``."""
        n = min(len(self), len(other))
        diff = (self.kinds[:n] != other.kinds[:n]) | (self.indices[:n] != other.indices[:n])
        if self.names == other.names:
            diff |= self.codes[:n] != other.codes[:n]
        else:
            diff |= self._name_column()[:n] != other._name_column()[:n]
        hits = np.flatnonzero(diff)
        if hits.size:
            return int(hits[0])
        if len(self) != len(other):
            return n
        return None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AccessTrace):
            return NotImplemented
        return len(self) == len(other) and self.first_divergence(other) is None

    __hash__ = None  # mutable numpy columns

    def access_counts(self, array_id: str, length: int, kind: str | None = None) -> np.ndarray:
        """How often each cell of ``array_id`` was touched."""
        if array_id not in self.names:
            return np.zeros(length, dtype=np.int64)
        mask = self.codes == self.names.index(array_id)
        if kind is not None:
            mask &= self.kinds == _CHAR_KIND[kind]
        return np.bincount(self.indices[mask], minlength=length)

    def write_text(self, fh: TextIO, chunk: int = 1 << 16) -> None:
        """Write one ``seq,kind,array_id,index`` line per event."""
        names = self._name_column()
        for start in range(0, len(self), chunk):
            stop = min(start + chunk, len(self))
            fh.write(
                "".join(
                    f"{seq},{_KIND_CHAR[k]},{a},{i}\n"
                    for seq, k, a, i in zip(
                        range(start, stop),
                        self.kinds[start:stop].tolist(),
                        names[start:stop],
                        self.indices[start:stop].tolist(),
                    )
                )
            )

    def to_text(self) -> str:
        buf = io.StringIO()
        self.write_text(buf)
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        return self.to_text().encode("ascii")

    def digest(self) -> str:
        """SHA-256 of the serialized form."""
        h = hashlib.sha256()
        buf = io.StringIO()
        self.write_text(buf)
        h.update(buf.getvalue().encode("ascii"))
        return h.hexdigest()

    @classmethod
    def from_text(cls, text: str | TextIO) -> AccessTrace:
        lines = text.splitlines() if isinstance(text, str) else text.read().splitlines()
        names: dict[str, int] = {}
        kinds, codes, indices = [], [], []
        for lineno, line in enumerate(lines, start=1):
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TraceFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
            seq, kind, name, index = parts
            try:
                seq_no, kind_code, idx = int(seq), _CHAR_KIND[kind], int(index)
            except (KeyError, ValueError) as exc:
                raise TraceFormatError(f"line {lineno}: bad field {exc}") from None
            if seq_no != len(kinds):
                raise TraceFormatError(f"line {lineno}: sequence number {seq} out of order")
            kinds.append(kind_code)
            indices.append(idx)
            codes.append(names.setdefault(name, len(names)))
        return cls(kinds, codes, indices, names)


class PrivateMemoryMeter:
    """High-water mark of words held inside the enclave.

    Advisory: exceeding the capacity is recorded, not prevented.
    """

    def __init__(self, capacity_words: float = math.inf):
        self.capacity_words = capacity_words
        self.current_words = 0
        self.peak_words = 0

    @contextlib.contextmanager
    def hold(self, words: int):
        self.current_words += words
        self.peak_words = max(self.peak_words, self.current_words)
        try:
            yield
        finally:
            self.current_words -= words

    @property
    def compliant(self) -> bool:
        return self.peak_words <= self.capacity_words


class ExternalArray:
    """Fixed-length array of fixed-width cells in untrusted memory.

    Cells are rows of a 2-D numpy array. Their contents count as encrypted:
    only positions reach the trace.
    """

    def __init__(self, memory: Memory, array_id: str, code: int, cells: np.ndarray):
        self.memory = memory
        self.array_id = array_id
        self.code = code
        self._cells = cells

    @property
    def length(self) -> int:
        return self._cells.shape[0]

    @property
    def width(self) -> int:
        return self._cells.shape[1]

    def __len__(self) -> int:
        return self.length

    def __repr__(self) -> str:
        return f"ExternalArray({self.array_id!r}, length={self.length}, width={self.width})"

    def _check(self, i: int) -> None:
        if not 0 <= i < self.length:
            raise BoundsError(f"{self.array_id}[{i}] outside [0, {self.length})")

    def _check_many(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self.length):
            bad = idx[(idx < 0) | (idx >= self.length)][0]
            raise BoundsError(f"{self.array_id}[{bad}] outside [0, {self.length})")

    def read(self, i: int) -> np.ndarray:
        i = int(i)
        self._check(i)
        self.memory.emit(READ, self.code, np.array([i]))
        return self._cells[i].copy()

    def write(self, i: int, payload) -> None:
        i = int(i)
        self._check(i)
        self._cells[i] = payload
        self.memory.emit(WRITE, self.code, np.array([i]))

    def read_many(self, idx=None) -> np.ndarray:
        """Read the given cells in order (default: a full forward scan)."""
        idx = np.arange(self.length) if idx is None else np.asarray(idx, dtype=np.int64)
        self._check_many(idx)
        self.memory.emit(READ, self.code, idx)
        return self._cells[idx].copy()

    def write_many(self, idx, values) -> None:
        idx = np.arange(self.length) if idx is None else np.asarray(idx, dtype=np.int64)
        self._check_many(idx)
        self._cells[idx] = values
        self.memory.emit(WRITE, self.code, idx)

    def peek(self) -> np.ndarray:
        """Untraced view of the cells, for harnesses and debugging only."""
        return self._cells


class Memory:
    """Owner of external arrays, the access recorder and the private-memory meter.

    With ``record=False`` only the number of events is kept, which is what
    large Monte Carlo runs need.
    """

    def __init__(self, *, record: bool = True, capacity_words: float = math.inf):
        self.record = record
        self.meter = PrivateMemoryMeter(capacity_words)
        self.arrays: dict[str, ExternalArray] = {}
        self._names: list[str] = []
        self._suffix: dict[str, int] = {}
        self._chunks: list[tuple] = []
        self._n_events = 0

    def array(self, name: str, length: int, width: int = 1, dtype=np.int64, data=None) -> ExternalArray:
        """Allocate an array. Initial contents are placed without trace events."""
        if length < 0:
            raise ValueError("negative array length")
        array_id = name
        while array_id in self.arrays:
            self._suffix[name] = self._suffix.get(name, 1) + 1
            array_id = f"{name}#{self._suffix[name]}"
        if data is None:
            cells = np.zeros((length, width), dtype=dtype)
        else:
            cells = np.array(data, dtype=dtype).reshape(length, width)
        arr = ExternalArray(self, array_id, len(self._names), cells)
        self._names.append(array_id)
        self.arrays[array_id] = arr
        return arr

    @property
    def n_events(self) -> int:
        return self._n_events

    def emit(self, kinds, codes, indices: np.ndarray) -> None:
        """Append a block of events. ``kinds``/``codes`` may be scalars."""
        n = len(indices)
        if n == 0:
            return
        self._n_events += n
        if self.record:
            self._chunks.append((n, kinds, codes, indices))

    def interleave(self, *columns: tuple[int, ExternalArray, np.ndarray]) -> None:
        """Log ``len(idx)`` rounds; round ``j`` touches ``(kind, arr, idx[j])`` per column.

        All index vectors must have equal length.
        """
        rounds = len(columns[0][2])
        width = len(columns)
        for _, arr, idx in columns:
            if len(idx) != rounds:
                raise ValueError("interleaved columns differ in length")
            arr._check_many(np.asarray(idx))
        if rounds == 0:
            return
        self._n_events += rounds * width
        if not self.record:
            return
        kinds = np.empty((rounds, width), dtype=np.uint8)
        codes = np.empty((rounds, width), dtype=np.int32)
        indices = np.empty((rounds, width), dtype=np.int64)
        for col, (kind, arr, idx) in enumerate(columns):
            kinds[:, col] = kind
            codes[:, col] = arr.code
            indices[:, col] = idx
        self._chunks.append((rounds * width, kinds.ravel(), codes.ravel(), indices.ravel()))

    def trace(self) -> AccessTrace:
        if not self.record:
            raise RuntimeError("this Memory only counts events; use record=True")
        if not self._chunks:
            return AccessTrace([], [], [], self._names)
        kinds = np.concatenate([np.broadcast_to(np.asarray(k, np.uint8), (n,)) for n, k, _, _ in self._chunks])
        codes = np.concatenate([np.broadcast_to(np.asarray(c, np.int32), (n,)) for n, _, c, _ in self._chunks])
        indices = np.concatenate([np.asarray(i, np.int64) for _, _, _, i in self._chunks])
        return AccessTrace(kinds, codes, indices, self._names)

    def capture(self) -> AccessTrace:
        """Return the trace so far and reset the recorder. Arrays are kept."""
        trace = self.trace()
        self._chunks = []
        self._n_events = 0
        return trace

    def private(self, words: int):
        """Context manager charging ``words`` of enclave memory to the meter."""
        return self.meter.hold(words)


def run_traced(run: Callable[..., object], *args, memory: Memory | None = None, **kwargs):
    """Run ``run(memory, *args, **kwargs)`` and return ``(result, trace)``."""
    mem = memory if memory is not None else Memory()
    result = run(mem, *args, **kwargs)
    return result, mem.capture()


def capture_trace(run: Callable[..., object], *args, **kwargs) -> AccessTrace:
    """Trace of ``run(memory, *args, **kwargs)`` on a fresh :class:`Memory`."""
    return run_traced(run, *args, **kwargs)[1]
