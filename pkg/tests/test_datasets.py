import numpy as np
import pytest

from odp.datasets import generate, read_csv, write_csv
from odp.errors import DatasetError, ParameterError


def test_uniform_and_zipf_shapes():
    u = generate(1000, 5, seed=0)
    assert u.n == 1000 and set(np.unique(u.item_types)) <= set(range(1, 6))
    z = generate(20_000, 50, "zipf", s=1.5, seed=0)
    h = np.bincount(z.item_types, minlength=51)[1:]
    assert h[0] > h[1] > h[9]
    assert h[0] / h[1] == pytest.approx(2**1.5, rel=0.1)


def test_round_trip(tmp_path):
    db = generate(50, 7, seed=3)
    path = tmp_path / "d.csv"
    write_csv(db, path)
    back = read_csv(path)
    assert np.array_equal(back.item_types, db.item_types)
    assert np.array_equal(back.record_ids, db.record_ids)


def test_from_file(tmp_path):
    src = tmp_path / "src.csv"
    src.write_text("record_id,item_type\n1,3\n2,3\n")
    db = generate(10, 4, "from-file", source=src, seed=1)
    assert db.item_types.tolist() == [3] * 10
    with pytest.raises(ParameterError):
        generate(10, 2, "from-file", source=src, seed=1)


@pytest.mark.parametrize(
    "text, where",
    [
        ("record_id,item_type\n1,2\n2\n", ":3"),
        ("1,2\n2,zz\n", ":2"),
        ("record_id,item_type\n1,0\n", ":2"),
        ("1,2\n1,3\n", "duplicate"),
    ],
)
def test_read_errors(tmp_path, text, where):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DatasetError, match=where):
        read_csv(p)


@pytest.mark.parametrize("kw", [dict(n=0, domain=3), dict(n=3, domain=0), dict(n=3, domain=3, dist="poisson")])
def test_generate_errors(kw):
    with pytest.raises(ParameterError):
        generate(**kw)
