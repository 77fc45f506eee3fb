"""Empirical checks of obliviousness, trace privacy and utility.

Three kinds of check:

* :func:`check_exact_obliviousness` runs one algorithm on several same-size
  inputs with a shared randomness tape and demands byte-identical traces.
* :func:`estimate_trace_epsilon` runs an algorithm many times on two
  neighbouring databases, projects every run onto a statistic that determines
  its trace, and reports the largest smoothed log-probability ratio.
* :func:`utility_suite` measures how often an error bound holds.

Checks produce :class:`CheckRow` objects that a :class:`Report` writes as CSV
plus a plain-text summary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import queries
from .errors import ParameterError
from .extmem import AccessTrace, Memory
from .noise import PrivacyParams, padding_constant, sample_laplace
from .queries import Database

#: Added to epsilon when judging an estimate; calibrated on pure Laplace mechanisms.
ESTIMATOR_SLACK = 0.3


@dataclass
class CheckRow:
    name: str
    metric: str
    bound: float
    observed: float
    passed: bool
    note: str = ""


@dataclass
class Report:
    title: str = "verification"
    rows: list[CheckRow] = field(default_factory=list)
    figures: list[Path] = field(default_factory=list)

    def add(self, row: CheckRow) -> CheckRow:
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "metric", "bound", "observed", "pass"])
            for r in self.rows:
                w.writerow([r.name, r.metric, f"{r.bound:.6g}", f"{r.observed:.6g}", "pass" if r.passed else "fail"])
        return path

    def summary(self) -> str:
        lines = [f"{self.title}: {'PASS' if self.passed else 'FAIL'} ({len(self.rows)} checks)"]
        for r in self.rows:
            status = "PASS" if r.passed else "FAIL"
            line = f"  [{status}] {r.name}: {r.metric} observed={r.observed:.6g} bound={r.bound:.6g}"
            if r.note:
                line += f"  ({r.note})"
            lines.append(line)
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# exact obliviousness


@dataclass
class ObliviousnessResult:
    passed: bool
    inputs: int
    trace_length: int
    divergence: dict | None = None

    def describe(self) -> str:
        if self.passed:
            return f"{self.inputs} inputs, identical {self.trace_length}-event traces"
        d = self.divergence
        return (
            f"input {d['input']} diverges from input 0 at event {d['seq']}: "
            f"expected {d['expected']}, got {d['observed']}"
        )


def check_exact_obliviousness(
    algorithm: Callable[[Memory, Any, np.random.Generator], Any],
    inputs: Sequence[Any],
    seeds: Sequence[int] = (0,),
) -> ObliviousnessResult:
    """Run ``algorithm(memory, input, rng)`` on every input once per tape seed.

    Passes iff, for every seed, all serialized traces equal the first one.
    """
    if not inputs:
        raise ParameterError("need at least one input")
    length = 0
    for seed in seeds:
        ref: AccessTrace | None = None
        ref_bytes = b""
        for pos, item in enumerate(inputs):
            mem = Memory()
            algorithm(mem, item, np.random.default_rng(seed))
            trace = mem.capture()
            if ref is None:
                ref, ref_bytes = trace, trace.to_bytes()
                length = len(trace)
                continue
            if trace.to_bytes() != ref_bytes:
                seq = ref.first_divergence(trace)
                div = {
                    "input": pos,
                    "seed": seed,
                    "seq": seq,
                    "expected": str(ref[seq]) if seq < len(ref) else "<end of trace>",
                    "observed": str(trace[seq]) if seq < len(trace) else "<end of trace>",
                }
                return ObliviousnessResult(False, len(inputs), length, div)
    return ObliviousnessResult(True, len(inputs), length)


# ----------------------------------------------------------------------------
# trace epsilon


@dataclass
class EpsilonEstimate:
    epsilon: float
    ci_low: float
    ci_high: float
    trials: int
    bins: int
    eligible_bins: int
    min_count: int
    log_ratios: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    bin_mass: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def _bin_counts(s1: np.ndarray, s2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    both = np.concatenate([s1, s2], axis=0)
    _, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    bins = inverse.max() + 1
    c1 = np.bincount(inverse[: len(s1)], minlength=bins)
    c2 = np.bincount(inverse[len(s1) :], minlength=bins)
    return c1, c2


def _max_log_ratio(c1, c2, n1, n2, eligible) -> tuple[float, np.ndarray]:
    b = len(c1)
    ratio = np.abs(np.log((c1 + 1) / (n1 + b)) - np.log((c2 + 1) / (n2 + b)))
    return (float(ratio[eligible].max()) if eligible.any() else 0.0), ratio


def default_min_count(trials: int) -> int:
    """Smallest combined bin count considered: 0.5% of both samples, at least 20."""
    return max(20, math.ceil(0.005 * 2 * trials))


def estimate_epsilon_from_samples(
    s1,
    s2,
    *,
    min_count: int | None = None,
    bootstrap: int = 200,
    rng: np.random.Generator | None = None,
) -> EpsilonEstimate:
    """Max add-one-smoothed |log(P1/P2)| over statistic values seen often enough.

    ``s1``/``s2`` hold one statistic row per trial. A bin takes part if its
    combined count reaches ``min_count``; this keeps sparse tail bins, whose
    ratios are dominated by sampling noise, out of the maximum. The interval
    is a percentile bootstrap over multinomial resamples of the bin counts.
    """
    s1 = np.asarray(s1).reshape(len(s1), -1)
    s2 = np.asarray(s2).reshape(len(s2), -1)
    n1, n2 = len(s1), len(s2)
    if min_count is None:
        min_count = default_min_count(min(n1, n2))
    c1, c2 = _bin_counts(s1, s2)
    eligible = (c1 + c2) >= min_count
    eps, ratio = _max_log_ratio(c1, c2, n1, n2, eligible)
    lo = hi = eps
    if bootstrap:
        rng = rng if rng is not None else np.random.default_rng(0)
        reps = np.empty(bootstrap)
        for r in range(bootstrap):
            b1 = rng.multinomial(n1, c1 / n1)
            b2 = rng.multinomial(n2, c2 / n2)
            reps[r] = _max_log_ratio(b1, b2, n1, n2, (b1 + b2) >= min_count)[0]
        lo, hi = (float(x) for x in np.percentile(reps, [2.5, 97.5]))
    return EpsilonEstimate(
        epsilon=eps,
        ci_low=lo,
        ci_high=hi,
        trials=min(n1, n2),
        bins=len(c1),
        eligible_bins=int(eligible.sum()),
        min_count=min_count,
        log_ratios=ratio,
        bin_mass=c1 + c2,
    )


def estimate_trace_epsilon(
    algorithm: Callable[[Memory, Database, np.random.Generator], Any],
    d1: Database,
    d2: Database,
    trials: int,
    *,
    statistic: Callable[[Memory, Any], Sequence[float]],
    seed: int = 0,
    min_count: int | None = None,
    bootstrap: int = 200,
) -> EpsilonEstimate:
    """Estimate the privacy loss of an algorithm's traces on neighbours ``d1``, ``d2``.

    ``statistic(memory, result)`` must return a vector that determines the
    trace distribution of the run, e.g. the per-type counts of a shuffled
    layout. Trials draw independent tapes from one master seed. Identical
    databases are accepted as a null check.
    """
    if len(d1.differing_positions(d2)) > 1:
        raise ParameterError("estimate_trace_epsilon needs neighbouring databases")
    seqs = np.random.SeedSequence(seed).spawn(2)
    samples = []
    for db, ss in zip((d1, d2), seqs):
        rows = []
        for child in ss.spawn(trials):
            mem = Memory(record=False)
            result = algorithm(mem, db, np.random.default_rng(child))
            rows.append(np.asarray(statistic(mem, result), dtype=np.float64))
        samples.append(np.array(rows))
    return estimate_epsilon_from_samples(
        samples[0], samples[1], min_count=min_count, bootstrap=bootstrap, rng=np.random.default_rng(seed)
    )


def histogram_trace_epsilon(
    d1: Database,
    d2: Database,
    k: int,
    epsilon: float,
    trials: int,
    *,
    seed: int = 0,
    zero_noise: bool = False,
    min_count: int | None = None,
) -> EpsilonEstimate:
    """Trace-privacy estimate for :func:`~odp.queries.histogram_odp`.

    The statistic is the layout's type histogram, restricted to the two types
    the neighbours disagree on. The remaining coordinates have identical
    distributions under both databases and the dummy count is a function of
    the noise alone, so dropping them leaves the privacy loss unchanged while
    keeping the bins well populated.
    """
    diff = d1.differing_positions(d2)
    if len(diff) > 1:
        raise ParameterError("histogram_trace_epsilon needs neighbouring databases")
    if len(diff):
        coords = sorted({int(d1.item_types[diff[0]]) - 1, int(d2.item_types[diff[0]]) - 1})
    else:
        coords = [0, 1] if k > 1 else [0]
    params = PrivacyParams(epsilon)

    def run(mem, db, rng):
        return queries.histogram_odp(db, k, params, rng, memory=mem, zero_noise=zero_noise)

    def stat(mem, _):
        return queries.configuration_counts(mem, k)[coords]

    return estimate_trace_epsilon(run, d1, d2, trials, statistic=stat, seed=seed, min_count=min_count)


def laplace_calibration(k: int, epsilon: float, trials: int, *, n: int = 200, seed: int = 0) -> EpsilonEstimate:
    """Run the estimator on bare ceil(Lap(2/eps)) histograms whose true loss is ``epsilon``.

    The neighbours move one unit of count from type 1 to type 2, like one
    record changing type.
    """
    rng = np.random.default_rng(seed)
    base = np.full(k, n // k, dtype=np.int64)
    h1, h2 = base.copy(), base.copy()
    h1[0] += 1
    h2[1] += 1
    s = [h + np.ceil(sample_laplace(2.0 / epsilon, rng, (trials, k))) for h in (h1, h2)]
    return estimate_epsilon_from_samples(s[0][:, :2], s[1][:, :2], rng=rng)


# ----------------------------------------------------------------------------
# utility


@dataclass
class UtilityResult:
    name: str
    trials: int
    pass_rate: float
    target: float
    threshold: float
    errors: np.ndarray = field(repr=False)
    limits: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.pass_rate >= self.threshold

    def row(self) -> CheckRow:
        return CheckRow(
            self.name,
            "pass_rate",
            self.threshold,
            self.pass_rate,
            self.passed,
            f"target {self.target:.4g}, {self.trials} trials",
        )


def binomial_threshold(target: float, trials: int, sigmas: float) -> float:
    return target - sigmas * math.sqrt(target * (1 - target) / trials)


def utility_suite(
    algorithm: Callable[[Database, np.random.Generator], Any],
    generator: Callable[[np.random.Generator], tuple[Database, Any]],
    trials: int,
    *,
    bound: Callable[[Any, Any], tuple[float, float]],
    target: float,
    name: str = "utility",
    seed: int = 0,
    slack_sigmas: float = 0.0,
    fixed_input: bool = False,
) -> UtilityResult:
    """Fraction of trials whose ``(error, limit) = bound(output, truth)`` has error <= limit.

    The check passes when that fraction reaches ``target`` minus
    ``slack_sigmas`` binomial standard deviations. With ``fixed_input`` the
    generator is called once and only the algorithm's tape varies.
    """
    ss = np.random.SeedSequence(seed)
    gen_seq, alg_seq = ss.spawn(2)
    fixed = generator(np.random.default_rng(gen_seq)) if fixed_input else None
    errors = np.empty(trials)
    limits = np.empty(trials)
    for t, (g, a) in enumerate(zip(gen_seq.spawn(trials), alg_seq.spawn(trials))):
        db, truth = fixed if fixed_input else generator(np.random.default_rng(g))
        out = algorithm(db, np.random.default_rng(a))
        errors[t], limits[t] = bound(out, truth)
    rate = float(np.mean(errors <= limits))
    threshold = binomial_threshold(target, trials, slack_sigmas) if slack_sigmas else target
    return UtilityResult(name, trials, rate, target, threshold, errors, limits)


# ready-made rows for the four query families ----------------------------------


def histogram_utility(n=10_000, k=16, epsilon=1.0, theta=0.05, trials=10_000, seed=0) -> UtilityResult:
    params = PrivacyParams(epsilon, 1.0 / n**2)
    limit = math.log(k / theta) * 2.0 / epsilon

    def gen(rng):
        db = Database(rng.integers(1, k + 1, n))
        return db, db.histogram(k)

    def alg(db, rng):
        return queries.histogram_odp(db, k, params, rng, memory=Memory(record=False))

    return utility_suite(
        alg, gen, trials, bound=lambda out, truth: (out.max_error(truth), limit),
        target=1 - theta, name="histogram_max_error", seed=seed, slack_sigmas=3.0, fixed_input=True,
    )


def distinct_sort_utility(n=1000, epsilon=1.0, theta=0.05, trials=10_000, seed=0, m=None) -> UtilityResult:
    params = PrivacyParams(epsilon)
    limit = math.log(1 / theta) / epsilon
    m = m or n

    def gen(rng):
        db = Database(rng.integers(1, m + 1, n))
        return db, db.distinct()

    def alg(db, rng):
        return queries.distinct_sort_odp(db, params, rng, memory=Memory(record=False))

    return utility_suite(
        alg, gen, trials, bound=lambda out, truth: (abs(out - truth), limit),
        target=1 - theta, name="distinct_sort_error", seed=seed, slack_sigmas=3.0, fixed_input=True,
    )


def distinct_stream_utility(
    n_distinct=10_000, alpha=0.1, epsilon=1.0, theta=0.05, trials=1000, seed=0, target=0.85
) -> UtilityResult:
    params = PrivacyParams(epsilon)
    additive = math.log(1 / theta) / epsilon

    def gen(rng):
        pool = np.unique(rng.integers(1, 1 << 40, n_distinct + n_distinct // 10 + 16))
        items = rng.choice(pool, size=n_distinct, replace=False)
        db = Database(items)
        return db, n_distinct

    def alg(db, rng):
        return queries.distinct_stream_odp(db, params, alpha, rng, memory=Memory(record=False))

    return utility_suite(
        alg, gen, trials, bound=lambda out, truth: (abs(out - truth), alpha * truth + additive),
        target=target, name="distinct_stream_error", seed=seed, fixed_input=True,
    )


def heavy_hitter_database(rng: np.random.Generator, n: int, k: int, m: int) -> Database:
    """Three items clearly above ``n/k``, two just below, and a long tail."""
    q = n // k
    heavy = [(1, 2 * q), (2, q + q // 2), (3, q + 1), (4, q - q // 100), (5, q - q // 20)]
    head = np.concatenate([np.full(c, item) for item, c in heavy])
    if len(head) > n or m < 6:
        raise ParameterError(f"heavy-hitter fixture needs k >= 7 and m >= 6 (n={n}, k={k}, m={m})")
    tail = rng.integers(6, m + 1, n - len(head))
    types = np.concatenate([head, tail])
    return Database(rng.permutation(types))


def heavy_hitter_rows(
    n=10_000, k=10, m=1 << 16, epsilon=1.0, theta=0.05, trials=1000, completeness_runs=100, seed=0
) -> list[CheckRow]:
    """Per-item error rate, floor violations and zero-noise completeness."""
    params = PrivacyParams(epsilon)
    ss = np.random.SeedSequence(seed)
    gen_seq, alg_seq, comp_seq = ss.spawn(3)
    db = heavy_hitter_database(np.random.default_rng(gen_seq), n, k, m)
    counts = np.bincount(db.item_types, minlength=m + 1)
    per_item = math.log(m / theta) * 2.0 / epsilon
    floor = n / k - 2 * per_item
    within = reported = floor_violations = 0
    for child in alg_seq.spawn(trials):
        out = queries.heavy_hitters_odp(db, k, m, params, theta, np.random.default_rng(child), memory=Memory(record=False))
        for item, noisy in out.entries:
            reported += 1
            within += abs(noisy - counts[item]) <= per_item
            floor_violations += counts[item] < floor
    complete = 0
    for child in comp_seq.spawn(completeness_runs):
        rng = np.random.default_rng(child)
        cdb = heavy_hitter_database(rng, n, k, m)
        c = np.bincount(cdb.item_types, minlength=m + 1)
        out = queries.heavy_hitters_odp(cdb, k, m, params, theta, rng, memory=Memory(record=False), zero_noise=True)
        must = set(np.flatnonzero(c > n / k).tolist())
        complete += must <= set(out.items())
    rate = within / reported if reported else 0.0
    return [
        CheckRow("heavy_hitters_item_error", "pass_rate", 1 - theta, rate, rate >= 1 - theta, f"{reported} reported items"),
        CheckRow("heavy_hitters_floor", "violations", 0, floor_violations, floor_violations == 0, f"floor {floor:.2f}"),
        CheckRow(
            "heavy_hitters_completeness", "pass_rate", 1.0, complete / completeness_runs,
            complete == completeness_runs, "zero-noise",
        ),
    ]


def zipf_database(rng: np.random.Generator, n: int, s: float = 1.2, m: int = 10_000) -> Database:
    """Items ``1..m`` with probability proportional to ``i**-s``."""
    p = np.arange(1, m + 1, dtype=np.float64) ** -s
    return Database(rng.choice(np.arange(1, m + 1), size=n, p=p / p.sum()))


def freq_oracle_rows(
    n=100_000, alpha=0.005, theta=0.01, theta_prime=0.05, epsilon=1.0, trials=20, seed=0, s=1.2, m=10_000
) -> list[CheckRow]:
    """No-underestimate before noise and the noisy two-sided error bound after."""
    params = PrivacyParams(epsilon)
    ss = np.random.SeedSequence(seed)
    gen_seq, alg_seq = ss.spawn(2)
    underestimates = queries_total = 0
    within = total = 0
    limit = None
    for g, a in zip(gen_seq.spawn(trials), alg_seq.spawn(trials)):
        db = zipf_database(np.random.default_rng(g), n, s, m)
        items = np.arange(1, m + 1)
        exact = np.bincount(db.item_types, minlength=m + 1)[1:]
        clean = queries.freq_oracle_build(db, alpha, theta, params, np.random.default_rng(a), zero_noise=True)
        underestimates += int(np.sum(clean.query_many(items) < exact))
        queries_total += m
        noisy = queries.freq_oracle_build(db, alpha, theta, params, np.random.default_rng(a))
        limit = queries.freq_oracle_error_bound(n, alpha, theta_prime, noisy.width, noisy.depth, epsilon)
        err = np.abs(noisy.query_many(items) - exact)
        within += int(np.sum(err <= limit))
        total += m
    rate = within / total
    target = 1 - theta - theta_prime
    return [
        CheckRow("count_min_no_underestimate", "underestimates", 0, underestimates, underestimates == 0, f"{queries_total} queries"),
        CheckRow("freq_oracle_error", "pass_rate", target, rate, rate >= target, f"limit {limit:.1f}"),
    ]


# ----------------------------------------------------------------------------
# trace-dp report helpers


def trace_dp_rows(
    n=200, k=4, epsilon=1.0, trials=100_000, strawman_trials=10_000, seed=0
) -> tuple[list[CheckRow], dict[str, EpsilonEstimate]]:
    """Calibration, histogram estimate and the noiseless strawman."""
    rng = np.random.default_rng(seed)
    d1 = Database(rng.integers(1, k + 1, n))
    pos = 0
    other = int(d1.item_types[pos]) % k + 1
    d2 = d1.with_type(pos, other)
    calib = laplace_calibration(k, epsilon, trials, n=n, seed=seed)
    est = histogram_trace_epsilon(d1, d2, k, epsilon, trials, seed=seed)
    straw = histogram_trace_epsilon(d1, d2, k, epsilon, strawman_trials, seed=seed, zero_noise=True)
    rows = [
        CheckRow(
            "estimator_calibration", "abs(eps_hat - eps)", ESTIMATOR_SLACK, abs(calib.epsilon - epsilon),
            abs(calib.epsilon - epsilon) <= ESTIMATOR_SLACK, f"eps_hat={calib.epsilon:.3f}",
        ),
        CheckRow(
            "histogram_trace_dp", "eps_hat", epsilon + ESTIMATOR_SLACK, est.epsilon,
            est.epsilon <= epsilon + ESTIMATOR_SLACK,
            f"95% CI [{est.ci_low:.3f}, {est.ci_high:.3f}], {est.eligible_bins} bins, C={padding_constant(n, epsilon)}",
        ),
        CheckRow(
            "strawman_no_noise", "eps_hat", 3.0, straw.epsilon, straw.epsilon > 3.0, "must exceed the bound",
        ),
    ]
    return rows, {"calibration": calib, "histogram": est, "strawman": straw}
