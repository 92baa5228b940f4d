import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndpp.errors import NumericalError
from ndpp.kernel import build_proposal, random_factors
from ndpp.oracle import (
    chi_square_pvalue,
    counts_from_samples,
    enumerate_distribution,
    poisson_binomial_pmf,
    tv_distance,
)
from ndpp.tree import construct_tree, sample_dpp, sample_elementary_indices, sample_item, tree_layout


def direct_sums(tree, Z):
    return np.stack([Z[a:b].T @ Z[a:b] for a, b in zip(tree.start, tree.stop)])


def orthonormal(M, r, rng):
    return np.linalg.qr(rng.standard_normal((M, r)))[0]


# ---------------------------------------------------------------- construction


def test_single_item_tree(rng):
    z = rng.standard_normal((1, 4))
    t = construct_tree(z)
    assert t.n_nodes == 1 and t.is_leaf(0)
    np.testing.assert_allclose(t.sigma[0], z.T @ z)


def test_four_item_tree(rng):
    Z = rng.standard_normal((4, 2))
    t = construct_tree(Z)
    assert t.n_nodes == 7
    assert int(np.sum(t.left >= 0)) == 3
    np.testing.assert_allclose(t.sigma[0], Z.T @ Z, atol=1e-14)


def test_node_sums_m37(rng):
    Z = orthonormal(37, 8, rng)
    t = construct_tree(Z)
    err = np.max(np.abs(t.sigma - direct_sums(t, Z)))
    assert err <= 1e-10
    internal = np.flatnonzero(t.left >= 0)
    np.testing.assert_array_equal(t.sigma[internal], t.sigma[t.left[internal]] + t.sigma[t.right[internal]])
    np.testing.assert_allclose(t.sigma[0], np.eye(8), atol=1e-10)


@pytest.mark.parametrize("M", [1, 2, 3, 5, 8, 37, 64, 100])
def test_depth_is_ceil_log2(M):
    t = construct_tree(np.ones((M, 2)))
    assert t.depth == (math.ceil(math.log2(M)) if M > 1 else 0)


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, 300), leaf=st.integers(1, 40))
def test_layout_partitions_items(M, leaf):
    start, stop, left, right, level = tree_layout(M, leaf)
    leaves = left < 0
    assert np.all(stop[leaves] - start[leaves] <= leaf)
    order = np.argsort(start[leaves])
    s, e = start[leaves][order], stop[leaves][order]
    assert s[0] == 0 and e[-1] == M and np.all(s[1:] == e[:-1])
    inner = ~leaves
    assert np.all(start[left[inner]] == start[inner])
    assert np.all(stop[right[inner]] == stop[inner])
    # left child takes the larger half
    assert np.all((stop[left[inner]] - start[left[inner]]) >= (stop[right[inner]] - start[right[inner]]))


def test_bucketed_tree_sums(rng):
    Z = rng.standard_normal((100, 6))
    t = construct_tree(Z, leaf_size=8)
    np.testing.assert_allclose(t.sigma, direct_sums(t, Z), atol=1e-10)
    assert t.nbytes < construct_tree(Z).nbytes / 4


def test_layout_rejects_bad_input():
    with pytest.raises(ValueError):
        tree_layout(0)
    with pytest.raises(ValueError):
        tree_layout(4, 0)


def test_construct_tree_leaves_input_writable(rng):
    Z = rng.standard_normal((6, 2))
    construct_tree(Z)
    Z[0, 0] = 1.0


# ---------------------------------------------------------------- elementary indices


def test_elementary_zero_eigenvalues(rng):
    for _ in range(10):
        assert sample_elementary_indices(np.zeros(5), rng).size == 0


def test_elementary_unit_eigenvalue(rng):
    n = 40_000
    hits = sum(sample_elementary_indices(np.array([1.0]), rng).size for _ in range(n))
    assert abs(hits / n - 0.5) < 4 * math.sqrt(0.25 / n)


def test_elementary_three_one():
    rng = np.random.default_rng(11)
    n = 100_000
    lam = np.array([3.0, 1.0])
    hits = sum(sample_elementary_indices(lam, rng).tolist() == [0] for _ in range(n))
    p = 3 / 8
    assert abs(hits / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------- item selection


def test_item_single_column(rng):
    Z = orthonormal(6, 3, rng)
    t = construct_tree(Z)
    E = np.array([1])
    n = 60_000
    counts = np.bincount([sample_item(t, np.eye(1), E, rng) for _ in range(n)], minlength=6)
    expect = Z[:, 1] ** 2 / np.sum(Z[:, 1] ** 2)
    assert tv_distance(counts, expect) < 0.01


def test_item_two_symmetric_rows():
    Z = np.array([[1.0, 0.0], [1.0, 0.0]]) / math.sqrt(2)
    t = construct_tree(Z)
    rng = np.random.default_rng(2)
    n = 40_000
    left = sum(sample_item(t, np.eye(1), np.array([0]), rng) == 0 for _ in range(n))
    assert abs(left / n - 0.5) < 4 * math.sqrt(0.25 / n)


def conditional_marginals(Z, E, Y):
    ZE = Z[:, E]
    if Y:
        A = ZE[Y]
        Q = np.eye(len(E)) - A.T @ np.linalg.solve(A @ A.T, A)
    else:
        Q = np.eye(len(E))
    w = np.einsum("ij,jk,ik->i", ZE, Q, ZE)
    return Q, np.clip(w, 0, None) / np.clip(w, 0, None).sum()


@pytest.mark.parametrize("leaf_size", [1, 3])
def test_item_matches_conditional_marginals(leaf_size):
    rng = np.random.default_rng(8)
    Z = orthonormal(16, 8, rng)
    t = construct_tree(Z, leaf_size=leaf_size)
    E = np.array([0, 2, 5, 7])
    Y = [3, 11]
    Q, expect = conditional_marginals(Z, E, Y)
    n = 100_000
    counts = np.bincount([sample_item(t, Q, E, rng) for _ in range(n)], minlength=16)
    assert counts[Y].sum() == 0
    assert tv_distance(counts, expect) < 0.01


def test_item_zero_mass_is_an_error(rng):
    t = construct_tree(orthonormal(4, 2, rng))
    with pytest.raises(NumericalError):
        sample_item(t, np.zeros((1, 1)), np.array([0]), rng)


# ---------------------------------------------------------------- full DPP draws


def test_dpp_all_zero_eigenvalues(rng):
    t = construct_tree(orthonormal(5, 2, rng))
    assert sample_dpp(t, np.zeros(2), rng).size == 0


def test_dpp_one_item():
    t = construct_tree(np.ones((1, 1)))
    rng = np.random.default_rng(4)
    n = 40_000
    hits = sum(sample_dpp(t, np.ones(1), rng).size for _ in range(n))
    assert abs(hits / n - 0.5) < 4 * math.sqrt(0.25 / n)


def test_dpp_size_equals_elementary_count():
    rng = np.random.default_rng(9)
    prop = build_proposal(random_factors(12, 4, rng))
    t = construct_tree(prop.eigvecs)
    lam = prop.eigvals
    for seed in range(200):
        a = np.random.default_rng(seed)
        Y = sample_dpp(t, lam, a)
        E = sample_elementary_indices(lam, np.random.default_rng(seed))
        assert Y.size == E.size
        assert np.unique(Y).size == Y.size


def test_dpp_distribution_small(rng):
    f = random_factors(6, 2, rng, scale=0.7)
    prop = build_proposal(f)
    ex = enumerate_distribution(prop.dense())
    t = construct_tree(prop.eigvecs)
    n = 30_000
    draws = [sample_dpp(t, prop.eigvals, rng) for _ in range(n)]
    counts = counts_from_samples(draws, 6)
    assert chi_square_pvalue(counts, ex) > 1e-3
    sizes = np.bincount([len(y) for y in draws], minlength=prop.eigvals.size + 1)
    pmf = poisson_binomial_pmf(prop.eigvals / (prop.eigvals + 1))
    np.testing.assert_allclose(ex.size_distribution()[: pmf.size], pmf, atol=1e-10)
    assert tv_distance(sizes, pmf) < 0.02
