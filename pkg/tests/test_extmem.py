import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odp.errors import BoundsError, TraceFormatError
from odp.extmem import (
    READ,
    WRITE,
    AccessTrace,
    Memory,
    PrivateMemoryMeter,
    capture_trace,
    polylog_capacity,
    run_traced,
)


def lines(trace):
    return trace.to_text().splitlines()


def test_read_returns_payload_and_logs_event():
    mem = Memory()
    a = mem.array("a", 4, 2, data=np.arange(8).reshape(4, 2))
    assert a.read(0).tolist() == [0, 1]
    assert lines(mem.trace()) == ["0,r,a,0"]


@pytest.mark.parametrize("i", [4, -1, 100])
def test_read_out_of_bounds(i):
    a = Memory().array("a", 4)
    with pytest.raises(BoundsError):
        a.read(i)


def test_out_of_bounds_bulk_logs_nothing():
    mem = Memory()
    a = mem.array("a", 4)
    with pytest.raises(BoundsError):
        a.read_many(np.array([0, 1, 4]))
    with pytest.raises(BoundsError):
        a.write(4, [1])
    assert mem.n_events == 0


def test_scan():
    mem = Memory()
    a = mem.array("a", 3)
    for i in range(3):
        a.read(i)
    assert lines(mem.trace()) == ["0,r,a,0", "1,r,a,1", "2,r,a,2"]


def test_write_and_fake_write():
    mem = Memory()
    a = mem.array("a", 4)
    a.write(2, [7])
    assert a.peek()[2, 0] == 7
    b = mem.array("b", 3, data=np.array([[5], [6], [9]]))
    v = b.read(1)
    b.write(1, v + 0)
    assert b.peek()[1, 0] == 6
    assert lines(mem.trace()) == ["0,w,a,2", "1,r,b,1", "2,w,b,1"]


def test_two_writes_same_index_both_logged():
    mem = Memory()
    a = mem.array("a", 2)
    a.write(1, [3])
    a.write(1, [4])
    assert lines(mem.trace()) == ["0,w,a,1", "1,w,a,1"]
    assert a.peek()[1, 0] == 4


def test_capture_trace_empty_and_reset():
    assert len(capture_trace(lambda mem: None)) == 0

    mem = Memory()
    a = mem.array("a", 5)
    a.read_many()
    assert len(mem.capture()) == 5
    assert len(mem.capture()) == 0


def test_scan_length_and_determinism():
    def scan(mem, n, seed):
        a = mem.array("a", n)
        rng = np.random.default_rng(seed)
        for i in rng.permutation(n):
            a.read(int(i))

    t1 = capture_trace(scan, 37, 5)
    t2 = capture_trace(scan, 37, 5)
    assert len(t1) == 37
    assert t1 == t2
    assert t1.to_bytes() == t2.to_bytes()
    assert t1 != capture_trace(scan, 37, 6)


def test_run_traced_returns_result():
    def body(mem):
        a = mem.array("a", 2)
        a.write(0, [1])
        return "done"

    out, trace = run_traced(body)
    assert out == "done" and len(trace) == 1


def test_payload_opacity():
    planted = 987654321987
    mem = Memory()
    a = mem.array("secret", 8, 2, data=np.full((8, 2), planted))
    a.read_many()
    a.write_many(np.arange(8), np.full((8, 2), planted + 1))
    text = mem.trace().to_text()
    assert str(planted) not in text and str(planted + 1) not in text
    for line in text.splitlines():
        seq, kind, name, idx = line.split(",")
        assert kind in "rw" and name == "secret" and 0 <= int(idx) < 8


def test_duplicate_names_get_suffix():
    mem = Memory()
    mem.array("a", 1)
    b = mem.array("a", 1)
    assert b.array_id == "a#2"


def test_interleave_order():
    mem = Memory()
    a = mem.array("a", 3)
    b = mem.array("b", 3)
    mem.interleave((READ, a, np.array([0, 1])), (WRITE, b, np.array([2, 0])))
    assert lines(mem.trace()) == ["0,r,a,0", "1,w,b,2", "2,r,a,1", "3,w,b,0"]


def test_record_false_counts_only():
    mem = Memory(record=False)
    a = mem.array("a", 10)
    a.read_many()
    a.write(3, [1])
    assert mem.n_events == 11
    with pytest.raises(RuntimeError):
        mem.trace()


def test_text_round_trip_and_digest():
    mem = Memory()
    a = mem.array("x", 6)
    b = mem.array("y", 2)
    a.read_many(np.array([5, 0, 3]))
    b.write(1, [0])
    t = mem.trace()
    back = AccessTrace.from_text(t.to_text())
    assert back == t
    assert back.to_bytes() == t.to_bytes()
    assert back.digest() == t.digest()
    assert AccessTrace.from_text(io.StringIO(t.to_text())) == t


@pytest.mark.parametrize(
    "text, line",
    [
        ("0,r,a,0\n1,q,a,1\n", 2),
        ("0,r,a,0\n2,r,a,1\n", 2),
        ("0,r,a\n", 1),
        ("0,r,a,zz\n", 1),
    ],
)
def test_trace_parse_errors_name_line(text, line):
    with pytest.raises(TraceFormatError, match=f"line {line}"):
        AccessTrace.from_text(text)


def test_first_divergence():
    t1 = AccessTrace.from_text("0,r,a,0\n1,r,a,1\n")
    t2 = AccessTrace.from_text("0,r,a,0\n1,r,a,2\n")
    t3 = AccessTrace.from_text("0,r,a,0\n")
    assert t1.first_divergence(t1) is None
    assert t1.first_divergence(t2) == 1
    assert t1.first_divergence(t3) == 1
    assert str(t2[1]) == "1,r,a,2"


def test_access_counts():
    t = AccessTrace.from_text("0,r,a,0\n1,w,a,0\n2,r,a,2\n3,r,b,0\n")
    assert t.access_counts("a", 3).tolist() == [2, 0, 1]
    assert t.access_counts("a", 3, "w").tolist() == [1, 0, 0]
    assert t.access_counts("zz", 2).tolist() == [0, 0]


def test_meter_tracks_peak():
    meter = PrivateMemoryMeter(10)
    with meter.hold(4):
        with meter.hold(5):
            pass
        with meter.hold(2):
            pass
    assert meter.peak_words == 9 and meter.current_words == 0
    assert meter.compliant
    with meter.hold(11):
        pass
    assert not meter.compliant


def test_polylog_capacity_grows():
    assert polylog_capacity(10**4) > polylog_capacity(100) > 0


ops = st.lists(
    st.tuples(st.sampled_from(["r", "w", "rm", "wm"]), st.integers(0, 7), st.integers(1, 5)),
    max_size=40,
)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_completeness_matches_call_count(seq):
    """Event count equals the number of cell accesses, however they were issued."""
    mem = Memory()
    a = mem.array("a", 8)
    expected = []
    for op, i, m in seq:
        idx = np.arange(i, min(i + m, 8))
        if op == "r":
            a.read(i)
            expected.append(("r", i))
        elif op == "w":
            a.write(i, [i])
            expected.append(("w", i))
        elif op == "rm":
            a.read_many(idx)
            expected += [("r", int(j)) for j in idx]
        else:
            a.write_many(idx, np.zeros((len(idx), 1)))
            expected += [("w", int(j)) for j in idx]
    t = mem.trace()
    assert mem.n_events == len(t) == len(expected)
    assert [(e.kind, e.index) for e in t] == expected
    assert [e.seq for e in t] == list(range(len(t)))
