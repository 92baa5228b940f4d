"""Brute-force ground truth for small ground sets.

Subsets are indexed by bitmask: item ``i`` is in subset ``s`` iff bit ``i``
of ``s`` is set.  All routines here enumerate ``2^M`` subsets and are
meant for ``M`` up to about 16 (hard cap 20).
"""

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

from .errors import NumericalError, PSDViolation
from .kernel import KernelFactors, build_proposal, log_normalizer

MAX_M = 20
WARN_M = 14
MINOR_TOL = 1e-12
NORMALIZER_RTOL = 1e-9


@lru_cache(maxsize=None)
def _masks_by_size(M):
    masks = np.arange(1 << M, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(M)) & 1
    sizes = bits.sum(axis=1)
    out = []
    for k in range(M + 1):
        sel = masks[sizes == k]
        idx = np.nonzero(bits[sel])[1].reshape(sel.size, k)
        out.append((sel, idx))
    return out


def mask_of(Y):
    m = 0
    for i in Y:
        m |= 1 << int(i)
    return m


def subset_of(mask):
    return [i for i in range(int(mask).bit_length()) if (mask >> i) & 1]


def all_minors(L, max_size=None):
    """``det(L_Y)`` for every subset, in bitmask order.

    Minors larger than ``max_size`` (the known rank) are set to exactly 0.
    """
    L = np.asarray(L, dtype=np.float64)
    M = L.shape[0]
    dets = np.zeros(1 << M)
    for k, (sel, idx) in enumerate(_masks_by_size(M)):
        if k == 0:
            dets[sel] = 1.0
            continue
        if max_size is not None and k > max_size:
            continue
        sub = L[idx[:, :, None], idx[:, None, :]]
        dets[sel] = np.linalg.det(sub)
    return dets


def _minor_tolerance(L, M):
    rho = max(1.0, float(np.max(np.linalg.norm(L, axis=1))))
    sizes = np.array([bin(m).count("1") for m in range(1 << M)])
    return MINOR_TOL * rho ** sizes


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Exact subset probabilities ``det(L_Y) / det(L + I)``."""

    M: int
    probs: np.ndarray
    log_normalizer: float

    def prob(self, Y):
        return float(self.probs[mask_of(Y)])

    def size_distribution(self):
        sizes = np.array([bin(m).count("1") for m in range(1 << self.M)])
        return np.bincount(sizes, weights=self.probs, minlength=self.M + 1)

    def inclusion_probabilities(self):
        masks = np.arange(1 << self.M)
        return np.array([self.probs[(masks >> i) & 1 == 1].sum() for i in range(self.M)])


def _dense_and_rank(kernel):
    if isinstance(kernel, KernelFactors):
        return kernel.dense(), 2 * kernel.K, log_normalizer(kernel)
    L = np.asarray(kernel, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("dense kernel must be square")
    sign, ld = np.linalg.slogdet(L + np.eye(L.shape[0]))
    if sign <= 0:
        raise PSDViolation("det(L + I) is not positive")
    return L, None, float(ld)


def enumerate_distribution(kernel):
    """Exact distribution of a ``KernelFactors`` or dense kernel.

    Raises ``PSDViolation`` on a minor below ``-1e-12 * rho^|Y|`` (``rho``
    the largest row norm of ``L``) and ``NumericalError`` when the direct
    sum of minors disagrees with ``det(L + I)`` beyond ``1e-9`` relative.
    """
    L, rank, log_z = _dense_and_rank(kernel)
    M = L.shape[0]
    if M > MAX_M:
        raise ValueError(f"exact enumeration is capped at M={MAX_M}, got M={M}")
    if M > WARN_M:
        warnings.warn(f"enumerating 2^{M} subsets", RuntimeWarning, stacklevel=2)
    dets = all_minors(L, rank)
    tol = _minor_tolerance(L, M)
    bad = dets < -tol
    if np.any(bad):
        m = int(np.argmax(bad))
        raise PSDViolation(f"minor of subset {subset_of(m)} is {dets[m]:.3e} < 0")
    dets = np.clip(dets, 0.0, None)
    total = dets.sum()
    z = np.exp(log_z)
    if abs(total - z) > NORMALIZER_RTOL * z:
        raise NumericalError(
            f"sum of minors {total!r} disagrees with det(L + I) = {z!r}"
        )
    return ExactDistribution(M=M, probs=dets / total, log_normalizer=log_z)


@dataclass(frozen=True)
class DominationReport:
    """``max_violation`` is absolute; ``max_rel_violation`` divides each
    excess by ``max(1, det(Lhat_Y))`` so that large minors are judged by
    their relative rounding error."""

    max_violation: float
    max_equality_gap: float
    n_subsets: int
    max_rel_violation: float = 0.0

    def passed(self, tol=1e-9, eq_rtol=1e-8, relative=False):
        v = self.max_rel_violation if relative else self.max_violation
        return v <= tol and self.max_equality_gap <= eq_rtol


def verify_domination(f, proposal=None):
    """Exhaustively compare ``det(L_Y)`` with ``det(Lhat_Y)``.

    ``max_violation`` is ``max_Y det(L_Y) - det(Lhat_Y)``;
    ``max_equality_gap`` is the largest relative gap over ``|Y| = 2K``
    (0 when ``2K > M``).  Those minors are taken from the square factors,
    ``det(Z_Y)^2 det(X)`` against ``det(E_Y)^2 prod(lambda)`` with ``E`` the
    proposal eigenvectors, so ill-conditioned subsets keep full precision.
    """
    if f.M > 16:
        raise ValueError(f"verify_domination is limited to M <= 16, got {f.M}")
    prop = proposal if proposal is not None else build_proposal(f)
    rank = 2 * f.K
    d_l = all_minors(f.dense(), rank)
    d_h = all_minors(prop.dense(), rank)
    violation = float(np.max(d_l - d_h))
    rel_violation = float(np.max((d_l - d_h) / np.maximum(1.0, np.abs(d_h))))
    gap = 0.0
    if rank <= f.M:
        sel, idx = _masks_by_size(f.M)[rank]
        if prop.rank == rank:
            # square factors: dense LU on a near-singular L_Y loses cond(L_Y) digits
            eq_l = np.linalg.det(f.Z[idx]) ** 2 * np.linalg.det(f.X)
            eq_h = np.linalg.det(prop.eigvecs[idx]) ** 2 * np.prod(prop.eigvals)
        else:
            eq_l, eq_h = d_l[sel], d_h[sel]
        denom = np.maximum(np.abs(eq_h), np.finfo(float).tiny)
        gap = float(np.max(np.abs(eq_l - eq_h) / denom))
    return DominationReport(violation, gap, 1 << f.M, rel_violation)


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


def counts_from_samples(samples, M):
    masks = np.fromiter((mask_of(Y) for Y in samples), dtype=np.int64)
    return np.bincount(masks, minlength=1 << M)


def _probs(exact):
    return exact.probs if isinstance(exact, ExactDistribution) else np.asarray(exact, float)


def tv_distance(counts, exact):
    counts = np.asarray(counts, dtype=np.float64)
    p = _probs(exact)
    if counts.shape != p.shape:
        raise ValueError("counts and probabilities index different spaces")
    return 0.5 * float(np.abs(counts / counts.sum() - p).sum())


def _pool(expected, min_expected):
    """Group cell indices, smallest expectation first, until each group
    reaches ``min_expected``; a short final group joins the previous one."""
    order = np.argsort(expected, kind="stable")
    groups, cur, acc = [], [], 0.0
    for i in order:
        cur.append(i)
        acc += expected[i]
        if acc >= min_expected:
            groups.append(cur)
            cur, acc = [], 0.0
    if cur:
        if groups:
            groups[-1].extend(cur)
        else:
            groups.append(cur)
    return groups


def chi_square_pvalue(counts, exact, min_expected=5.0):
    """Pearson goodness-of-fit p-value with pooled low-expectation cells.

    Any observation in a cell of probability exactly zero gives p = 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    p = _probs(exact)
    n = counts.sum()
    if np.any(counts[p == 0] > 0):
        return 0.0
    groups = _pool(n * p, min_expected)
    if len(groups) < 2:
        raise ValueError("fewer than two pooled cells; the test is degenerate")
    obs = np.array([counts[g].sum() for g in groups])
    exp = np.array([n * p[g].sum() for g in groups])
    stat = float(np.sum((obs - exp) ** 2 / exp))
    return float(stats.chi2.sf(stat, len(groups) - 1))


def two_sample_chi_square_pvalue(counts_a, counts_b, min_expected=5.0):
    """Homogeneity test between two count vectors over the same cells."""
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    na, nb = a.sum(), b.sum()
    pooled = (a + b) / (na + nb)
    groups = _pool(min(na, nb) * pooled, min_expected)
    if len(groups) < 2:
        raise ValueError("fewer than two pooled cells; the test is degenerate")
    table = np.array([[a[g].sum() for g in groups], [b[g].sum() for g in groups]])
    table = table[:, table.sum(axis=0) > 0]
    return float(stats.chi2_contingency(table, correction=False)[1])


def chain_conditionals(exact, Y):
    """Sequential inclusion probabilities along the decisions that produce ``Y``.

    Entry ``i`` is ``Pr(i in S | S agrees with Y on items 0..i-1)``, the
    quantity the sequential sampler computes at step ``i``.
    """
    M = exact.M
    target = mask_of(Y)
    masks = np.arange(1 << M)
    alive = np.ones(1 << M, dtype=bool)
    out = []
    for i in range(M):
        bit = (masks >> i) & 1 == 1
        total = exact.probs[alive].sum()
        out.append(float(exact.probs[alive & bit].sum() / total))
        alive &= bit == bool((target >> i) & 1)
    return out


def poisson_binomial_pmf(q):
    """Distribution of the number of successes of independent Bernoulli(q_i)."""
    pmf = np.array([1.0])
    for qi in q:
        pmf = np.convolve(pmf, [1.0 - qi, qi])
    return pmf
