"""Laplace sampling and the truncated, rounded noise used to size fake records."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


@dataclass
class NoiseVector:
    values: np.ndarray
    truncated: bool = False
    raw: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.values)


def truncation_bound(n: int, epsilon: float) -> float:
    """``10 ln(n) / epsilon``: largest admissible |X_i| before the all-zero fallback."""
    return 10.0 * math.log(n) / epsilon


def padding_constant(n: int, epsilon: float) -> int:
    """Number of fake records per type before noise, ``ceil(10 ln(n) / epsilon)``."""
    return math.ceil(truncation_bound(n, epsilon))


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw from Lap(0, ``scale``) by inverting the CDF of one uniform per sample."""
    if not scale > 0:
        raise ParameterError(f"Laplace scale must be positive, got {scale}")
    u = rng.random(size)
    v = np.asarray(u, dtype=np.float64) - 0.5
    # u == 0 would give log(0); clamp to the smallest representable mass
    tail = np.maximum(1.0 - 2.0 * np.abs(v), 2.0**-53)
    x = -scale * np.sign(v) * np.log(tail)
    return float(x) if size is None else x


def laplace_uniform(x: float, scale: float) -> float:
    """The uniform draw that :func:`sample_laplace` maps to ``x``."""
    half = 0.5 * (1.0 - math.exp(-abs(x) / scale))
    return 0.5 + half if x >= 0 else 0.5 - half


def _truncate_and_round(raw: np.ndarray, bound: float) -> tuple[np.ndarray, np.ndarray]:
    # works on (..., k) blocks so the batched path shares the exact rule
    truncated = np.any(np.abs(raw) > bound, axis=-1)
    kept = np.where(truncated[..., None], 0.0, raw)
    return np.ceil(kept).astype(np.int64), truncated


def truncated_noise_vector(
    k: int,
    epsilon: float,
    n: int,
    rng: np.random.Generator,
    *,
    zero_noise: bool = False,
) -> NoiseVector:
    """k i.i.d. Lap(2/epsilon) draws, zeroed if any exceeds ``10 ln(n)/epsilon``, then ceiled."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if zero_noise:
        return NoiseVector(np.zeros(k, dtype=np.int64), False, np.zeros(k))
    raw = sample_laplace(2.0 / epsilon, rng, k)
    values, truncated = _truncate_and_round(raw, truncation_bound(n, epsilon))
    return NoiseVector(values, bool(truncated), raw)


def truncated_noise_batch(trials: int, k: int, epsilon: float, n: int, rng: np.random.Generator):
    """Vectorised :func:`truncated_noise_vector` for ``trials`` independent vectors.

    Returns ``(values, truncated)`` with shapes ``(trials, k)`` and ``(trials,)``.
    """
    raw = sample_laplace(2.0 / epsilon, rng, (trials, k))
    return _truncate_and_round(raw, truncation_bound(n, epsilon))


class RiggedTape:
    """Random generator whose first ``random()`` draws are dictated.

    Used to force rare branches (such as the truncation fallback) on demand.
    Everything else is delegated to a wrapped :class:`numpy.random.Generator`.
    """

    def __init__(self, uniforms, rng: np.random.Generator | None = None):
        self._queue = deque(float(u) for u in uniforms)
        self._rng = rng if rng is not None else np.random.default_rng(0)

    @classmethod
    def from_laplace(cls, draws, scale: float, rng: np.random.Generator | None = None) -> RiggedTape:
        return cls([laplace_uniform(x, scale) for x in draws], rng)

    def random(self, size=None):
        if size is None:
            return self._queue.popleft() if self._queue else self._rng.random()
        total = int(np.prod(size))
        take = min(total, len(self._queue))
        head = [self._queue.popleft() for _ in range(take)]
        tail = self._rng.random(total - take)
        return np.concatenate([np.array(head, dtype=np.float64), tail]).reshape(size)

    def __getattr__(self, name):
        return getattr(self._rng, name)
