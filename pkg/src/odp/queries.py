"""Obliviously differentially private statistics over a :class:`~odp.extmem.Memory`.

Every query copies the database into external memory, runs against it, and
leaves the access trace in the memory's recorder. ``zero_noise=True`` forces
every Laplace draw to 0 (fake records are still generated) and exists only for
exact oracle comparisons; such output is *not* private.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import noise
from .errors import ConfigurationError, ParameterError
from .extmem import READ, WRITE, ExternalArray, Memory
from .noise import NoiseVector, PrivacyParams, padding_constant, truncated_noise_vector
from .oprim import OramArray, oblivious_shuffle, oblivious_sort
from .sketches import CountMinSketch, KmvSketch, count_min_shape, kmv_capacity

#: First record id used for fake and dummy records.
PADDING_ID_BASE = 1 << 62

ID, TYPE = 0, 1


@dataclass(frozen=True)
class Record:
    record_id: int
    item_type: int


class Database:
    """``n`` records stored as parallel id/type columns."""

    def __init__(self, item_types, record_ids=None):
        self.item_types = np.asarray(item_types, dtype=np.int64).ravel()
        if record_ids is None:
            record_ids = np.arange(1, len(self.item_types) + 1)
        self.record_ids = np.asarray(record_ids, dtype=np.int64).ravel()
        if len(self.record_ids) != len(self.item_types):
            raise ParameterError("record_ids and item_types differ in length")
        if len(np.unique(self.record_ids)) != len(self.record_ids):
            raise ParameterError("record ids must be unique")

    @classmethod
    def from_records(cls, records) -> Database:
        records = list(records)
        return cls([r.item_type for r in records], [r.record_id for r in records])

    @property
    def n(self) -> int:
        return len(self.item_types)

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        for rid, t in zip(self.record_ids.tolist(), self.item_types.tolist()):
            yield Record(rid, t)

    def histogram(self, k: int) -> np.ndarray:
        """Exact counts of types ``1..k``."""
        return np.bincount(self.item_types, minlength=k + 1)[1 : k + 1]

    def distinct(self) -> int:
        return len(np.unique(self.item_types))

    def check_domain(self, k: int) -> None:
        if self.n and (self.item_types.min() < 1 or self.item_types.max() > k):
            raise ParameterError(f"item types must lie in 1..{k}")

    def load(self, memory: Memory, name: str = "db") -> ExternalArray:
        """Place the records in external memory as ``[record_id, item_type]`` cells."""
        cells = np.stack([self.record_ids, self.item_types], axis=1)
        return memory.array(name, self.n, 2, np.int64, data=cells)

    def with_type(self, position: int, item_type: int) -> Database:
        """Neighbouring database: same ids, one record's type replaced."""
        types = self.item_types.copy()
        types[position] = item_type
        return Database(types, self.record_ids)

    def differing_positions(self, other: Database) -> np.ndarray:
        if self.n != other.n or not np.array_equal(self.record_ids, other.record_ids):
            raise ParameterError("neighbouring databases need the same size and record ids")
        return np.flatnonzero(self.item_types != other.item_types)

    def neighbor_position(self, other: Database) -> int:
        """Position of the single differing record; raises if not neighbours."""
        diff = self.differing_positions(other)
        if len(diff) != 1:
            raise ParameterError(f"databases differ in {len(diff)} records, expected exactly 1")
        return int(diff[0])


@dataclass
class NoisyHistogram:
    counts: np.ndarray
    params: PrivacyParams
    padding_constant: int = 0
    augmented_length: int = 0
    zero_noise: bool = False
    debug_noise: NoiseVector | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.counts)

    def max_error(self, exact) -> float:
        return float(np.max(np.abs(self.counts - np.asarray(exact))))


@dataclass
class HeavyHitterList:
    entries: list[tuple[int, float]]
    threshold: float
    params: PrivacyParams
    error_bound: float

    def __len__(self) -> int:
        return len(self.entries)

    def items(self) -> list[int]:
        return [t for t, _ in self.entries]


def _rng(rng) -> np.random.Generator:
    return rng if rng is not None and not isinstance(rng, (int, np.integer)) else np.random.default_rng(rng)


def _laplace(scale, rng, size=None, zero_noise=False):
    if zero_noise:
        return 0.0 if size is None else np.zeros(size)
    return noise.sample_laplace(scale, rng, size)


def _validate_histogram(db: Database, k: int, params: PrivacyParams) -> None:
    if not isinstance(params, PrivacyParams):
        raise ParameterError("params must be PrivacyParams")
    if not 1 <= k <= db.n:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={db.n}")
    if db.n < 2:
        raise ParameterError("histogram needs n >= 2")
    db.check_domain(k)


def augmented_size(n: int, k: int, epsilon: float) -> int:
    """``T = n + 2 k C`` with ``C = ceil(10 ln(n) / epsilon)``."""
    return n + 2 * k * padding_constant(n, epsilon)


def histogram_odp(
    db: Database,
    k: int,
    params: PrivacyParams,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
    debug: bool = False,
) -> NoisyHistogram:
    """Histogram whose output and access trace are jointly (eps, 1/n^2)-DP.

    Pads the data with ``C + X_i`` fake records of each type and
    ``k C - sum X_i`` dummies (type ``k+1``), shuffles obliviously, then counts
    in one scan where dummies rewrite counters round-robin unchanged.
    """
    _validate_histogram(db, k, params)
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    n, eps = db.n, params.epsilon
    C = padding_constant(n, eps)
    T = n + 2 * k * C
    dummy = k + 1

    src = db.load(mem)
    with mem.private(k + 4):
        X = truncated_noise_vector(k, eps, n, rng, zero_noise=zero_noise)
        fake_counts = C + X.values
        n_dummy = k * C - int(X.values.sum())

        aug = mem.array("aug", T, 2)
        head = np.arange(n)
        mem.interleave((READ, src, head), (WRITE, aug, head))
        aug.peek()[:n] = src.peek()
        pad_types = np.concatenate([np.repeat(np.arange(1, k + 1), fake_counts), np.full(n_dummy, dummy)])
        pad = np.stack([PADDING_ID_BASE + np.arange(T - n), pad_types], axis=1)
        aug.write_many(np.arange(n, T), pad)

        oblivious_shuffle(aug, rng, tie_col=ID)

        hist = mem.array("hist", k, 1)
        hist.write_many(np.arange(k), np.zeros((k, 1), np.int64))
        types = aug.peek()[:, TYPE]
        is_dummy = types == dummy
        # round-robin pointer over counters 0..k-1, advanced only by dummies
        ptr = (np.cumsum(is_dummy) - 1) % k
        target = np.where(is_dummy, ptr, types - 1)
        scan = np.arange(T)
        mem.interleave((READ, aug, scan), (READ, hist, target), (WRITE, hist, target))
        hist.peek()[:, 0] = np.bincount(types[~is_dummy] - 1, minlength=k)

        cells = np.arange(k)
        mem.interleave((READ, hist, cells), (WRITE, hist, cells))
        hist.peek()[:, 0] -= C
        counts = hist.peek()[:, 0].astype(np.float64)

    return NoisyHistogram(
        counts=counts,
        params=params,
        padding_constant=C,
        augmented_length=T,
        zero_noise=zero_noise,
        debug_noise=X if (debug or zero_noise) else None,
    )


def configuration_counts(memory: Memory, k: int) -> np.ndarray:
    """Per-type counts ``1..k+1`` of the shuffled layout left by :func:`histogram_odp`.

    The layout's type sequence (the configuration) fixes the whole trace, so
    these counts are the statistic through which the trace depends on the
    data. Reads cells without tracing; harness use only.
    """
    types = memory.arrays["aug"].peek()[:, TYPE]
    return np.bincount(types, minlength=k + 2)[1 : k + 2]


def replay_histogram_scan(types: np.ndarray, k: int) -> np.ndarray:
    """Counter index touched at each scan step for a given configuration."""
    types = np.asarray(types)
    is_dummy = types == k + 1
    ptr = (np.cumsum(is_dummy) - 1) % k
    return np.where(is_dummy, ptr, types - 1)


def histogram_oram(
    db: Database,
    k: int,
    params: PrivacyParams,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> NoisyHistogram:
    """Laplace histogram with counters behind a linear-scan ORAM (fully oblivious)."""
    _validate_histogram(db, k, params)
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    src = db.load(mem)
    counters = OramArray(mem, "hist", k)
    with mem.private(4):
        for j in range(db.n):
            t = int(src.read(j)[TYPE])
            c = counters.read(t - 1)
            counters.write(t - 1, c + 1)
        exact = np.array([counters.read(i)[0] for i in range(k)], dtype=np.float64)
    counts = exact + _laplace(2.0 / params.epsilon, rng, k, zero_noise)
    return NoisyHistogram(counts=counts, params=params, zero_noise=zero_noise)


def histogram_naive(
    db: Database,
    k: int,
    params: PrivacyParams,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> NoisyHistogram:
    """Textbook Laplace histogram with direct counter updates.

    Its output is private but its trace spells out every record's type. Kept
    as the negative control for the obliviousness checks.
    """
    _validate_histogram(db, k, params)
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    src = db.load(mem)
    hist = mem.array("hist", k, 1)
    hist.write_many(np.arange(k), np.zeros((k, 1), np.int64))
    types = src.peek()[:, TYPE]
    mem.interleave((READ, src, np.arange(db.n)), (READ, hist, types - 1), (WRITE, hist, types - 1))
    hist.peek()[:, 0] = np.bincount(types - 1, minlength=k)
    exact = hist.read_many()[:, 0].astype(np.float64)
    counts = exact + _laplace(2.0 / params.epsilon, rng, k, zero_noise)
    return NoisyHistogram(counts=counts, params=params, zero_noise=zero_noise)


def distinct_sort_odp(
    db: Database,
    params: PrivacyParams,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> float:
    """Distinct count via oblivious sort plus one boundary-counting scan, + Lap(1/eps)."""
    if db.n < 1:
        raise ParameterError("distinct count needs n >= 1")
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    arr = db.load(mem)
    oblivious_sort(arr, key_cols=(TYPE, ID))
    with mem.private(3):
        types = arr.read_many()[:, TYPE]
        exact = 1 + int(np.count_nonzero(types[1:] != types[:-1]))
    return exact + _laplace(1.0 / params.epsilon, rng, None, zero_noise)


def distinct_stream_odp(
    db: Database,
    params: PrivacyParams,
    alpha: float,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> float:
    """One forward pass into a KMV sketch held in private memory, + Lap(1/eps)."""
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    arr = db.load(mem)
    sketch = KmvSketch(kmv_capacity(alpha), seed=int(rng.integers(0, 2**63)))
    with mem.private(sketch.words() + 2):
        sketch.update_many(arr.read_many()[:, TYPE])
        estimate = sketch.estimate()
    return estimate + _laplace(1.0 / params.epsilon, rng, None, zero_noise)


def heavy_hitters_delta(m: int, tau: float) -> float:
    return float(m) ** (1.0 - tau)


def heavy_hitters_odp(
    db: Database,
    k: int,
    m: int,
    params: PrivacyParams,
    theta: float = 0.05,
    rng=None,
    *,
    tau: float = 2.0,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> HeavyHitterList:
    """Items whose noisy count reaches ``n / k``, found with two oblivious sorts.

    The second sort orders run-final tuples (flag 0) first, by noisy count
    descending and then item ascending, so the answer sits in the first
    ``min(k, n)`` slots of the tuple list.
    """
    n, eps = db.n, params.epsilon
    if not tau > 1:
        raise ConfigurationError(f"tau must exceed 1, got {tau}")
    if k < 1 or m < 1:
        raise ConfigurationError("k and m must be positive")
    if not n / k > tau / eps * math.log(m):
        raise ConfigurationError(
            f"heavy hitters need n/k > (tau/eps) ln m: {n / k:.3f} <= {tau / eps * math.log(m):.3f}"
        )
    db.check_domain(m)
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    arr = db.load(mem)
    oblivious_sort(arr, key_cols=(TYPE, ID))

    # tuple list b: [flag, -noisy_count, item, running_count]
    b = mem.array("tuples", n, 4, np.float64)
    pos = np.arange(n)
    with mem.private(6):
        types = arr.peek()[:, TYPE]
        mem.interleave((READ, arr, pos), (WRITE, b, pos))
        starts = np.r_[True, types[1:] != types[:-1]]
        run_start = np.maximum.accumulate(np.where(starts, pos, 0))
        running = pos - run_start + 1
        b.peek()[:] = np.stack([np.zeros(n), np.zeros(n), types, running], axis=1)

        back = pos[::-1]
        mem.interleave((READ, b, back), (WRITE, b, back))
        last = np.r_[types[1:] != types[:-1], True]
        # noise is drawn in backward-scan order, one draw per run
        run_ends = np.flatnonzero(last)[::-1]
        noisy = running[run_ends] + _laplace(2.0 / eps, rng, len(run_ends), zero_noise)
        cells = b.peek()
        cells[:, 0] = 1.0
        cells[:, 1] = -running
        cells[run_ends, 0] = 0.0
        cells[run_ends, 1] = -noisy

    oblivious_sort(b, key_cols=(0, 1, 2))

    threshold = n / k
    slots = min(k, n)
    entries = []
    with mem.private(4):
        head = b.read_many(np.arange(slots))
        for flag, neg, item, _ in head:
            if flag == 0 and -neg >= threshold:
                entries.append((int(item), float(-neg)))
    bound = math.log(m / theta) * 2.0 / eps
    return HeavyHitterList(entries=entries, threshold=threshold, params=params, error_bound=bound)


def freq_oracle_build(
    db: Database,
    alpha: float,
    theta: float,
    params: PrivacyParams,
    rng=None,
    *,
    memory: Memory | None = None,
    zero_noise: bool = False,
) -> CountMinSketch:
    """Count-min sketch of the item column, released with Lap(2d/eps) on every cell."""
    rng = _rng(rng)
    mem = memory if memory is not None else Memory()
    arr = db.load(mem)
    w, d = count_min_shape(alpha, theta)
    sketch = CountMinSketch(w, d, seed=int(rng.integers(0, 2**63)))
    with mem.private(sketch.words() + 2):
        sketch.update_many(arr.read_many()[:, TYPE])
        noisy = sketch.table + _laplace(2.0 * d / params.epsilon, rng, (d, w), zero_noise)
    return CountMinSketch(w, d, table=noisy.astype(np.float64), row_seeds=sketch.row_seeds)


def freq_oracle_query(s: CountMinSketch, item) -> float:
    return float(s.query(item))


def freq_oracle_error_bound(n: int, alpha: float, theta_prime: float, width: int, depth: int, epsilon: float) -> float:
    """``alpha N + ln(d w / theta') * 2d / eps``."""
    return alpha * n + math.log(depth * width / theta_prime) * 2.0 * depth / epsilon
