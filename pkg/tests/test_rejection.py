import math

import numpy as np
import pytest

from ndpp.errors import DominationViolation, RejectionBudgetExceeded
from ndpp.kernel import KernelFactors, build_proposal, random_factors, submatrix_logdet
from ndpp.oracle import (
    chi_square_pvalue,
    counts_from_samples,
    enumerate_distribution,
    two_sample_chi_square_pvalue,
)
from ndpp.cholesky import sample_cholesky_batch
from ndpp.rejection import (
    RejectionSampler,
    RejectionStats,
    acceptance_ratio,
    default_max_rounds,
    preprocess,
    sample_reject,
)


def test_symmetric_kernel_accepts_first_proposal(rng):
    f = KernelFactors(rng.standard_normal((6, 2)), np.zeros((6, 2)), rng.standard_normal((2, 2)))
    s = preprocess(f)
    assert s.U == 1.0
    for _ in range(200):
        _, rounds = sample_reject(s, rng)
        assert rounds == 1


def test_u_matches_determinant_ratio(rng):
    f = random_factors(8, 4, rng, ondpp=True)
    s = preprocess(f)
    L, Lh = f.dense(), s.proposal.dense()
    ratio = np.linalg.det(Lh + np.eye(8)) / np.linalg.det(L + np.eye(8))
    assert s.U == pytest.approx(ratio, rel=1e-8)
    assert s.U <= (1 + s.omega) ** 2 + 1e-12


def test_acceptance_ratio_matches_minors(rng):
    f = random_factors(10, 4, rng, ondpp=True)
    s = preprocess(f)
    Lh = s.proposal.dense()
    for k in range(1, 9):
        Y = np.sort(rng.choice(10, k, replace=False))
        p, sign = acceptance_ratio(s, Y)
        sl, ll = submatrix_logdet(f, Y)
        expect = sl * math.exp(ll) / np.linalg.det(Lh[np.ix_(Y, Y)])
        assert sign == 1.0
        assert p == pytest.approx(expect, rel=1e-9)
        assert p <= 1 + 1e-8


def test_full_size_proposals_accepted_with_certainty(rng):
    f = random_factors(10, 4, rng, ondpp=True)
    s = preprocess(f)
    for _ in range(10):
        Y = np.sort(rng.choice(10, 8, replace=False))
        assert acceptance_ratio(s, Y)[0] == pytest.approx(1.0, rel=1e-8)


def test_empty_proposal_accepted(rng):
    s = preprocess(random_factors(5, 2, rng))
    assert acceptance_ratio(s, []) == (1.0, 1.0)


def test_oversized_proposal_has_zero_ratio(rng):
    s = preprocess(random_factors(8, 2, rng))
    assert acceptance_ratio(s, [0, 1, 2, 3, 4])[0] == 0.0


def test_default_max_rounds():
    assert default_max_rounds(1.0) == 100
    assert default_max_rounds(1.234) == 124
    assert default_max_rounds(float("inf")) > 10**15


def test_budget_exhaustion(rng):
    # V = 0 with unit rotation strengths: U = 4 and odd-size proposals always fail
    B = np.linalg.qr(rng.standard_normal((8, 4)))[0]
    D = np.zeros((4, 4))
    D[0, 1] = D[2, 3] = 1.0
    s = preprocess(KernelFactors(np.zeros((8, 4)), B, D, ondpp=True))
    assert s.U == pytest.approx(4.0)
    with pytest.raises(RejectionBudgetExceeded) as info:
        for _ in range(200):
            sample_reject(s, rng, max_rounds=1)
    assert info.value.rounds == 1
    with pytest.raises(ValueError):
        sample_reject(s, rng, max_rounds=0)


def test_domination_violation_is_raised(rng):
    f = random_factors(6, 2, rng, ondpp=True)
    s = preprocess(f)
    p = s.proposal
    shrunk = type(p)(p.Z, p.xhat * 0.25, p.eigvals, p.eigvecs, p.sigmas, p.K)
    bad = RejectionSampler(f, shrunk, s.tree, s.constant)
    with pytest.raises(DominationViolation):
        for _ in range(500):
            sample_reject(bad, rng)


def test_stats_accumulate(rng):
    s = preprocess(random_factors(8, 4, rng, ondpp=True))
    st = RejectionStats()
    total = 0
    for _ in range(300):
        total += sample_reject(s, rng, stats=st)[1]
    assert st.draws == 300 and st.rounds == total
    assert st.rejections == total - 300
    assert 0 < st.max_acceptance <= 1 + 1e-8
    assert 0 < st.mean_acceptance <= 1


def test_agrees_with_cholesky_sampler(rng):
    f = random_factors(6, 2, rng, ondpp=True, scale=0.9)
    s = preprocess(f)
    n = 20_000
    a = counts_from_samples([sample_reject(s, rng)[0] for _ in range(n)], 6)
    b = counts_from_samples(sample_cholesky_batch(f, n, rng), 6)
    assert two_sample_chi_square_pvalue(a, b) > 1e-3
    assert chi_square_pvalue(a, enumerate_distribution(f)) > 1e-3


@pytest.mark.slow
def test_rounds_are_geometric(hetero):
    s = preprocess(hetero)
    rng = np.random.default_rng(77)
    n = 100_000
    rounds = np.array([sample_reject(s, rng)[1] for _ in range(n)])
    U = s.U
    p = 1.0 / U
    var = (1 - p) / p**2
    assert abs(rounds.mean() - U) <= 3 * math.sqrt(var / n)
    # sample variance: Var(s^2) ~ var^2 (kurtosis - 1) / n, geometric kurtosis 9 + p^2/(1-p)
    assert abs(rounds.var(ddof=1) - var) <= 3 * var * math.sqrt((8 + p**2 / (1 - p)) / n)


def test_leaf_size_does_not_change_law(rng):
    f = random_factors(6, 2, rng, ondpp=True, scale=0.9)
    s = preprocess(f, leaf_size=4)
    n = 20_000
    counts = counts_from_samples([sample_reject(s, rng)[0] for _ in range(n)], 6)
    assert chi_square_pvalue(counts, enumerate_distribution(f)) > 1e-3


def test_proposal_from_kernel_matches(rng):
    f = random_factors(6, 2, rng)
    s = preprocess(f)
    np.testing.assert_allclose(s.proposal.dense(), build_proposal(f).dense())
