import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from odp.errors import ParameterError
from odp.noise import (
    PrivacyParams,
    RiggedTape,
    laplace_uniform,
    padding_constant,
    sample_laplace,
    truncated_noise_batch,
    truncated_noise_vector,
    truncation_bound,
)


@pytest.mark.parametrize("eps, delta", [(0.0, 0.0), (-1.0, 0.0), (1.0, 1.0), (1.0, -0.1), (math.nan, 0.0)])
def test_params_validation(eps, delta):
    with pytest.raises(ParameterError):
        PrivacyParams(eps, delta)


def test_params_ok():
    p = PrivacyParams(0.5, 1e-6)
    assert p.as_dict() == {"epsilon": 0.5, "delta": 1e-6}


@pytest.mark.parametrize("scale", [0.0, -2.0])
def test_laplace_scale_must_be_positive(scale):
    with pytest.raises(ParameterError):
        sample_laplace(scale, np.random.default_rng(0))


@pytest.fixture(scope="module")
def million():
    return sample_laplace(2.0, np.random.default_rng(11), 10**6)


def test_laplace_mean(million):
    # std-err sqrt(8 / 1e6) ~ 0.0028
    assert abs(million.mean()) < 0.02


def test_laplace_variance(million):
    assert abs(million.var() - 8.0) < 0.1


@pytest.mark.parametrize("t", [1, 2, 5])
def test_laplace_tail_mass(million, t):
    observed = np.mean(np.abs(million) >= 2.0 * t)
    bound = math.exp(-t)
    sigma = math.sqrt(bound * (1 - bound) / len(million))
    assert observed <= bound * 1.05
    assert abs(observed - bound) < 4 * sigma


def test_laplace_matches_reference_distribution():
    x = sample_laplace(1.5, np.random.default_rng(3), 20_000)
    assert stats.kstest(x, stats.laplace(scale=1.5).cdf).pvalue > 1e-3


def test_laplace_uniform_inverts_sampler():
    for x in [-7.25, -2.3, 0.0, 0.4, 12.0]:
        tape = RiggedTape([laplace_uniform(x, 2.0)])
        assert sample_laplace(2.0, tape) == pytest.approx(x, abs=1e-9)


def test_padding_constant_values():
    assert padding_constant(100, 1.0) == 47
    assert truncation_bound(100, 1.0) == pytest.approx(46.0517, abs=1e-4)
    assert padding_constant(200, 1.0) == math.ceil(10 * math.log(200))


def test_forced_truncation():
    n, eps = 50, 1.0
    big = truncation_bound(n, eps) + 1
    tape = RiggedTape.from_laplace([0.7, -big, 3.1], 2.0 / eps)
    nv = truncated_noise_vector(3, eps, n, tape)
    assert nv.truncated
    assert nv.values.tolist() == [0, 0, 0]


def test_truncation_is_strict_at_bound():
    n, eps = 50, 1.0
    edge = truncation_bound(n, eps) * (1 - 1e-12)
    nv = truncated_noise_vector(1, eps, n, RiggedTape.from_laplace([edge], 2.0))
    assert not nv.truncated
    assert nv.values[0] == padding_constant(n, eps)


def test_ceiling_rounding():
    nv = truncated_noise_vector(3, 1.0, 100, RiggedTape.from_laplace([-2.3, 2.3, -0.5], 2.0))
    assert nv.values.tolist() == [-2, 3, 0]
    assert not nv.truncated


def test_zero_noise_mode():
    nv = truncated_noise_vector(4, 1.0, 10, np.random.default_rng(0), zero_noise=True)
    assert nv.values.tolist() == [0, 0, 0, 0]


@pytest.mark.parametrize("k, n", [(0, 10), (2, 1)])
def test_noise_vector_params(k, n):
    with pytest.raises(ParameterError):
        truncated_noise_vector(k, 1.0, n, np.random.default_rng(0))


@settings(max_examples=80, deadline=None)
@given(
    k=st.integers(1, 30),
    n=st.integers(2, 10**6),
    eps=st.floats(0.05, 20.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_noise_vector_invariants(k, n, eps, seed):
    nv = truncated_noise_vector(k, eps, n, np.random.default_rng(seed))
    bound = truncation_bound(n, eps)
    assert len(nv) == k
    assert np.all(nv.values >= -bound)
    assert np.all(nv.values <= math.ceil(bound))
    assert np.all(bound + nv.values >= 0)
    assert np.all(padding_constant(n, eps) + nv.values >= 0)
    if nv.truncated:
        assert not nv.values.any()


def test_batch_matches_scalar_rule():
    values, flags = truncated_noise_batch(500, 5, 0.7, 3, np.random.default_rng(9))
    assert values.shape == (500, 5) and flags.shape == (500,)
    assert flags.any()
    assert not values[flags].any()
    assert np.all(np.abs(values) <= padding_constant(3, 0.7))


def test_fallback_rate_against_exact_probability():
    # k = n = 3, eps = 1: Pr[|Lap(2)| > 10 ln 3] = 3^-5 per draw
    n = k = 3
    trials = 10**5
    _, flags = truncated_noise_batch(trials, k, 1.0, n, np.random.default_rng(1))
    exact = 1 - (1 - n**-5.0) ** k
    sigma = math.sqrt(exact * (1 - exact) / trials)
    rate = flags.mean()
    assert abs(rate - exact) < 4 * sigma
    assert rate <= 1 / n**2


def test_fallback_rate_k_equals_n_100():
    trials = 10**5
    _, flags = truncated_noise_batch(trials, 100, 1.0, 100, np.random.default_rng(2))
    assert flags.mean() <= 1e-4 + 3 * math.sqrt(1e-4 * (1 - 1e-4) / trials)
