"""Command-line front end: ``odp gen``, ``odp query``, ``odp verify``.

Exit codes: 0 ok, 2 usage or input error, 3 privacy budget exhausted,
4 verification failed. ``--seed`` falls back to the ``ODP_SEED`` environment
variable. Query results are JSON objects on stdout carrying
``schema_version``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import datasets, queries, verify
from .budget import PrivacyBudget
from .errors import ConfigurationError, DatasetError, OdpError, ParameterError
from .extmem import AccessTrace, Memory
from .noise import PrivacyParams
from .oprim import OramArray, oblivious_shuffle, oblivious_sort

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_VERIFY = 4

QUERIES = ("histogram", "histogram-oram", "distinct", "distinct-stream", "heavy-hitters", "freq-oracle")


class UsageError(Exception):
    pass


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ODP_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ODP_SEED must be an integer, got {env!r}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


def _error(kind: str, message: str, code: int) -> int:
    _emit({"schema_version": SCHEMA_VERSION, "error": {"kind": kind, "message": message}})
    return code


# ---------------------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    if args.k is None and args.m is None:
        raise UsageError("gen needs --k or --m")
    domain = args.k if args.k is not None else args.m
    db = datasets.generate(args.n, domain, args.dist, s=args.s, source=args.source, seed=_seed(args))
    if args.out in (None, "-"):
        datasets.write_csv(db, sys.stdout)
    else:
        datasets.write_csv(db, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------- query


def _query_delta(args, db) -> float:
    if args.query == "histogram":
        return 1.0 / db.n**2
    if args.query == "heavy-hitters":
        return queries.heavy_hitters_delta(_domain_m(args, db), args.tau)
    return 0.0


def _domain_m(args, db) -> int:
    return args.m if args.m is not None else int(db.item_types.max())


def _load_budget(args) -> PrivacyBudget:
    if args.ledger and Path(args.ledger).exists():
        budget = PrivacyBudget.load(args.ledger)
        if not (math.isclose(budget.epsilon_total, args.budget_eps) and math.isclose(budget.delta_total, args.budget_delta)):
            if args.budget_eps_given or args.budget_delta_given:
                raise UsageError("ledger totals are fixed; --budget-eps/--budget-delta disagree with the ledger file")
        return budget
    return PrivacyBudget(args.budget_eps, args.budget_delta)


def _run_query(args, db, params, rng, mem):
    q = args.query
    if q in ("histogram", "histogram-oram", "heavy-hitters") and args.k is None:
        raise UsageError(f"{q} needs --k")
    if q == "histogram":
        h = queries.histogram_odp(db, args.k, params, rng, memory=mem, zero_noise=args.zero_noise)
        return {"counts": h.counts.tolist(), "padding_constant": h.padding_constant, "augmented_length": h.augmented_length}
    if q == "histogram-oram":
        h = queries.histogram_oram(db, args.k, params, rng, memory=mem, zero_noise=args.zero_noise)
        return {"counts": h.counts.tolist()}
    if q == "distinct":
        return {"distinct": queries.distinct_sort_odp(db, params, rng, memory=mem, zero_noise=args.zero_noise)}
    if q == "distinct-stream":
        est = queries.distinct_stream_odp(db, params, args.alpha, rng, memory=mem, zero_noise=args.zero_noise)
        return {"distinct": est, "alpha": args.alpha}
    if q == "heavy-hitters":
        hh = queries.heavy_hitters_odp(
            db, args.k, _domain_m(args, db), params, args.theta, rng,
            tau=args.tau, memory=mem, zero_noise=args.zero_noise,
        )
        return {
            "heavy_hitters": [{"item": i, "count": c} for i, c in hh.entries],
            "threshold": hh.threshold,
            "error_bound": hh.error_bound,
        }
    if q == "freq-oracle":
        sketch = queries.freq_oracle_build(db, args.alpha, args.theta, params, rng, memory=mem, zero_noise=args.zero_noise)
        out = {"width": sketch.width, "depth": sketch.depth}
        if args.items:
            items = [int(x) for x in args.items.split(",") if x.strip()]
            out["frequencies"] = {str(i): queries.freq_oracle_query(sketch, i) for i in items}
        if args.sketch_out:
            Path(args.sketch_out).write_bytes(sketch.to_bytes())
            out["sketch_file"] = args.sketch_out
        return out
    raise UsageError(f"unknown query {q}")


def cmd_query(args) -> int:
    if args.zero_noise and not args.unsafe:
        raise UsageError("--zero-noise releases exact answers; acknowledge with --unsafe")
    try:
        db = datasets.read_csv(args.dataset)
    except (DatasetError, OSError) as exc:
        return _error("parse_error", str(exc), EXIT_USAGE)
    delta = _query_delta(args, db)
    params = PrivacyParams(args.eps, delta)
    budget = _load_budget(args)
    if not budget.charge(params, label=args.query):
        return _error(
            "budget_exhausted",
            f"query needs eps={params.epsilon:g}, delta={params.delta:g}; remaining eps="
            f"{budget.epsilon_remaining:g}, delta={budget.delta_remaining:g}",
            EXIT_BUDGET,
        )
    rng = np.random.default_rng(_seed(args))
    mem = Memory(record=bool(args.trace))
    try:
        result = _run_query(args, db, params, rng, mem)
    except (ConfigurationError, ParameterError) as exc:
        return _error("configuration_error", str(exc), EXIT_USAGE)
    # the ledger is persisted only once the query has actually run
    if args.ledger:
        budget.save(args.ledger)
    trace_file = None
    if args.trace:
        with open(args.trace, "w") as fh:
            mem.trace().write_text(fh)
        trace_file = args.trace
    _emit(
        {
            "schema_version": SCHEMA_VERSION,
            "query": args.query,
            "params": params.as_dict(),
            "private": not args.zero_noise,
            "result": result,
            "budget_remaining": {"epsilon": budget.epsilon_remaining, "delta": budget.delta_remaining},
            "trace_file": trace_file,
            "trace_events": mem.n_events,
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------- verify


def _obliviousness_algorithm(name: str, n: int, k: int):
    params = PrivacyParams(1.0)

    def sort(mem, db, rng):
        oblivious_sort(db.load(mem), key_cols=(1, 0))

    def shuffle(mem, db, rng):
        oblivious_shuffle(db.load(mem), rng)

    def oram(mem, db, rng):
        o = OramArray(mem, "oram", k)
        for t in db.item_types.tolist():
            c = o.read(t - 1)
            o.write(t - 1, c + 1)

    def hist_oram(mem, db, rng):
        queries.histogram_oram(db, k, params, rng, memory=mem)

    def hist(mem, db, rng):
        queries.histogram_odp(db, k, params, rng, memory=mem)

    def naive(mem, db, rng):
        queries.histogram_naive(db, k, params, rng, memory=mem)

    table = {
        "sort": sort,
        "shuffle": shuffle,
        "oram": oram,
        "histogram-oram": hist_oram,
        "histogram": hist,
        "naive": naive,
    }
    if name not in table:
        raise UsageError(f"unknown algorithm {name!r}; choose from {', '.join(table)}")
    return table[name]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(report: verify.Report, out: Path) -> int:
    report.write_csv(out / "report.csv")
    summary = report.summary()
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_verify(args) -> int:
    from . import plotting

    seed = _seed(args) or 0
    out = _out_dir(args)
    report = verify.Report(f"verify {args.suite}")
    if args.suite == "obliviousness":
        alg = _obliviousness_algorithm(args.alg, args.n, args.k)
        rng = np.random.default_rng(seed)
        inputs = [queries.Database(rng.integers(1, args.k + 1, args.n)) for _ in range(args.pairs + 1)]
        res = verify.check_exact_obliviousness(alg, inputs, seeds=(seed,))
        report.add(verify.CheckRow(f"obliviousness[{args.alg}]", "identical_traces", 1, float(res.passed), res.passed, res.describe()))
        for i in (0, 1):
            mem = Memory()
            alg(mem, inputs[i], np.random.default_rng(seed))
            report.figures.append(plotting.plot_access_pattern(mem.capture(), out / f"access_pattern_{i}.png", f"{args.alg}, input {i}"))
    elif args.suite == "trace-dp":
        if args.alg != "histogram":
            raise UsageError("trace-dp supports --alg histogram")
        rows, estimates = verify.trace_dp_rows(args.n, args.k, args.eps, args.trials, args.strawman_trials, seed)
        for r in rows:
            report.add(r)
        for name, est in estimates.items():
            report.figures.append(
                plotting.plot_log_ratios(est, args.eps, verify.ESTIMATOR_SLACK, out / f"log_ratios_{name}.png", name)
            )
    elif args.suite == "utility":
        _utility(args, seed, report, out, plotting)
    return _finish(report, out)


def _utility(args, seed, report, out, plotting) -> None:
    alg, trials, eps, theta = args.alg, args.trials, args.eps, args.theta
    if alg == "histogram":
        res = verify.histogram_utility(args.n or 10_000, args.k or 16, eps, theta, trials or 10_000, seed)
    elif alg == "distinct":
        res = verify.distinct_sort_utility(args.n or 1000, eps, theta, trials or 10_000, seed)
    elif alg == "distinct-stream":
        res = verify.distinct_stream_utility(args.n or 10_000, args.alpha or 0.1, eps, theta, trials or 1000, seed)
    elif alg == "heavy-hitters":
        for r in verify.heavy_hitter_rows(args.n or 10_000, args.k or 10, args.m or 1 << 16, eps, theta, trials or 1000, seed=seed):
            report.add(r)
        return
    elif alg == "freq-oracle":
        for r in verify.freq_oracle_rows(args.n or 100_000, args.alpha or 0.005, 0.01, theta, eps, trials or 20, seed):
            report.add(r)
        return
    else:
        raise UsageError(f"unknown utility algorithm {alg!r}")
    report.add(res.row())
    report.figures.append(plotting.plot_error_distribution(res, out / f"{res.name}.png"))


def cmd_verify_traces(args) -> int:
    a = AccessTrace.from_text(Path(args.first).read_text())
    b = AccessTrace.from_text(Path(args.second).read_text())
    seq = a.first_divergence(b)
    if seq is None:
        print(f"identical: {len(a)} events")
        return EXIT_OK
    left = str(a[seq]) if seq < len(a) else "<end>"
    right = str(b[seq]) if seq < len(b) else "<end>"
    print(f"traces diverge at event {seq}: {left} vs {right}")
    return EXIT_VERIFY


# ---------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, help="types 1..k")
    g.add_argument("--m", type=int, help="items 1..m")
    g.add_argument("--dist", default="uniform", choices=datasets.DISTRIBUTIONS)
    g.add_argument("--s", type=float, default=1.2, help="zipf exponent")
    g.add_argument("--source", help="dataset to resample for --dist from-file")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output path (default stdout)")
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("query", help="run one private query against a dataset")
    q.add_argument("query", choices=QUERIES)
    q.add_argument("dataset")
    q.add_argument("--eps", type=float, required=True)
    q.add_argument("--k", type=int)
    q.add_argument("--m", type=int)
    q.add_argument("--alpha", type=float, default=0.1)
    q.add_argument("--theta", type=float, default=0.05)
    q.add_argument("--tau", type=float, default=2.0)
    q.add_argument("--items", help="comma-separated items to look up in the frequency oracle")
    q.add_argument("--sketch-out", help="write the released sketch blob here")
    q.add_argument("--budget-eps", type=float)
    q.add_argument("--budget-delta", type=float)
    q.add_argument("--ledger", help="JSON ledger file persisting the budget across runs")
    q.add_argument("--trace", help="write the access trace here")
    q.add_argument("--zero-noise", action="store_true", help="disable noise (not private)")
    q.add_argument("--unsafe", action="store_true", help="acknowledge --zero-noise")
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("verify", help="run a verification suite")
    vs = v.add_subparsers(dest="suite", required=True)
    for suite in ("obliviousness", "trace-dp", "utility"):
        s = vs.add_parser(suite)
        s.add_argument("--alg", required=True)
        s.add_argument("--n", type=int, default=None)
        s.add_argument("--k", type=int, default=None)
        s.add_argument("--m", type=int, default=None)
        s.add_argument("--eps", type=float, default=1.0)
        s.add_argument("--theta", type=float, default=0.05)
        s.add_argument("--alpha", type=float, default=None)
        s.add_argument("--trials", type=int, default=None)
        s.add_argument("--strawman-trials", type=int, default=10_000)
        s.add_argument("--pairs", type=int, default=50)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", default="odp-report")
        s.set_defaults(func=cmd_verify)
    t = vs.add_parser("traces", help="compare two serialized traces")
    t.add_argument("first")
    t.add_argument("second")
    t.set_defaults(func=cmd_verify_traces)
    return p


_VERIFY_DEFAULTS = {
    "obliviousness": {"n": 32, "k": 4, "trials": None},
    "trace-dp": {"n": 200, "k": 4, "trials": 100_000},
    "utility": {},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "query":
        args.budget_eps_given = args.budget_eps is not None
        args.budget_delta_given = args.budget_delta is not None
        args.budget_eps = 1.0 if args.budget_eps is None else args.budget_eps
        args.budget_delta = 1e-3 if args.budget_delta is None else args.budget_delta
    if args.command == "verify" and args.suite in _VERIFY_DEFAULTS:
        for key, value in _VERIFY_DEFAULTS[args.suite].items():
            if getattr(args, key) is None:
                setattr(args, key, value)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"odp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OdpError as exc:
        print(f"odp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
