"""Synthetic databases and the ``record_id,item_type`` CSV format."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DatasetError, ParameterError
from .queries import Database

HEADER = ("record_id", "item_type")
DISTRIBUTIONS = ("uniform", "zipf", "from-file")


def generate(
    n: int,
    domain: int,
    dist: str = "uniform",
    *,
    s: float = 1.2,
    source: str | Path | None = None,
    seed: int | None = None,
) -> Database:
    """``n`` records with types in ``1..domain`` and ids ``1..n``.

    ``zipf`` gives type ``i`` probability proportional to ``i**-s``;
    ``from-file`` resamples the types of an existing dataset with replacement.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if domain < 1:
        raise ParameterError(f"domain size must be >= 1, got {domain}")
    rng = np.random.default_rng(seed)
    if dist == "uniform":
        types = rng.integers(1, domain + 1, n)
    elif dist == "zipf":
        if not s > 0:
            raise ParameterError(f"zipf exponent must be positive, got {s}")
        p = np.arange(1, domain + 1, dtype=np.float64) ** -s
        types = rng.choice(np.arange(1, domain + 1), size=n, p=p / p.sum())
    elif dist == "from-file":
        if source is None:
            raise ParameterError("from-file needs a source dataset")
        pool = read_csv(source).item_types
        if len(pool) == 0:
            raise ParameterError("source dataset is empty")
        types = rng.choice(pool, size=n, replace=True)
        if types.max() > domain:
            raise ParameterError(f"source types exceed the domain 1..{domain}")
    else:
        raise ParameterError(f"unknown distribution {dist!r}; choose from {', '.join(DISTRIBUTIONS)}")
    return Database(types)


def write_csv(db: Database, path) -> None:
    """Write ``db`` to a path or an open text file."""
    if hasattr(path, "write"):
        _write_rows(db, path)
        return
    with Path(path).open("w", newline="") as fh:
        _write_rows(db, fh)


def _write_rows(db: Database, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(zip(db.record_ids.tolist(), db.item_types.tolist()))


def read_csv(path: str | Path) -> Database:
    ids, types = [], []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and tuple(c.strip() for c in row) == HEADER:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                rid, t = int(row[0]), int(row[1])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer field in {row!r}") from None
            if t < 1:
                raise DatasetError(f"{path}:{lineno}: item_type must be >= 1, got {t}")
            ids.append(rid)
            types.append(t)
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate record_id")
    return Database(types, ids)
