import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ndpp.cholesky as chol
from ndpp.cholesky import inclusion_trace, sample_cholesky, sample_cholesky_batch
from ndpp.errors import NumericalError
from ndpp.kernel import KernelFactors, log_normalizer, marginal_core, random_factors, submatrix_logdet
from ndpp.oracle import (
    chain_conditionals,
    chi_square_pvalue,
    counts_from_samples,
    enumerate_distribution,
    tv_distance,
)


def one_item():
    return KernelFactors.padded([[1.0]], [[0.0]], [[0.0]])


def test_single_item_is_fair_coin():
    f = one_item()
    rng = np.random.default_rng(0)
    hits = sum(sample_cholesky(f, rng).size for _ in range(20_000))
    assert abs(hits / 20_000 - 0.5) < 4 * math.sqrt(0.25 / 20_000)


def test_single_item_trace():
    (rec,) = inclusion_trace(one_item(), np.random.default_rng(0))
    assert rec[0] == 0
    assert rec[1] == pytest.approx(0.5)


def test_empty_model_never_includes(rng):
    f = KernelFactors(np.zeros((5, 2)), np.zeros((5, 2)), rng.standard_normal((2, 2)))
    for _ in range(20):
        assert sample_cholesky(f, rng).size == 0
    trace = inclusion_trace(f, rng)
    assert all(p == 0.0 and not inc for _, p, inc in trace)


def test_trace_matches_oracle_conditionals(rng):
    f = random_factors(6, 2, rng)
    ex = enumerate_distribution(f)
    trace = inclusion_trace(f, np.random.default_rng(42))
    Y = [i for i, _, inc in trace if inc]
    np.testing.assert_allclose([p for _, p, _ in trace], chain_conditionals(ex, Y), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(3, 10))
def test_trace_product_equals_subset_probability(seed, M):
    rng = np.random.default_rng(seed)
    f = random_factors(M, 2, rng, scale=0.8)
    trace = inclusion_trace(f, rng)
    Y = [i for i, _, inc in trace if inc]
    logp = sum(math.log(p if inc else 1.0 - p) for _, p, inc in trace)
    sign, ld = submatrix_logdet(f, Y)
    assert sign > 0
    assert logp == pytest.approx(ld - log_normalizer(f), rel=1e-8, abs=1e-8)


def test_one_uniform_per_item(rng):
    f = random_factors(9, 2, rng)
    a = np.random.default_rng(5)
    sample_cholesky(f, a)
    b = np.random.default_rng(5)
    b.random(9)
    assert a.random() == b.random()


def test_batch_matches_scalar_draws(rng):
    f = random_factors(7, 4, rng, scale=0.6)
    core = marginal_core(f)
    g = np.random.default_rng(3)
    scalar = [sample_cholesky(f, g, core) for _ in range(50)]
    batch = sample_cholesky_batch(f, 50, np.random.default_rng(3), core)
    assert [s.tolist() for s in scalar] == [s.tolist() for s in batch]


def test_batch_chunks_consume_like_scalar(rng, monkeypatch):
    monkeypatch.setattr(chol, "_BATCH_CHUNK", 7)
    f = random_factors(5, 2, rng)
    g = np.random.default_rng(1)
    scalar = [sample_cholesky(f, g) for _ in range(20)]
    batch = sample_cholesky_batch(f, 20, np.random.default_rng(1))
    assert [s.tolist() for s in scalar] == [s.tolist() for s in batch]


def test_distribution_small_instance(rng):
    f = random_factors(6, 2, rng, scale=0.7)
    ex = enumerate_distribution(f)
    counts = counts_from_samples(sample_cholesky_batch(f, 40_000, rng), 6)
    assert chi_square_pvalue(counts, ex) > 1e-3
    assert tv_distance(counts, ex) < 0.03


def test_out_of_range_probability_is_an_error(rng, monkeypatch):
    f = random_factors(4, 2, rng)
    core = marginal_core(f)
    bad = type(core)(core.W * 100.0)
    with pytest.raises(NumericalError):
        sample_cholesky(f, rng, bad)
    with pytest.raises(NumericalError):
        sample_cholesky_batch(f, 3, rng, bad)
