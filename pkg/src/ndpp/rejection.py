"""Exact NDPP sampling by rejection from the dominating symmetric DPP.

A proposal ``Y`` drawn from ``Lhat`` is accepted with probability
``det(L_Y) / det(Lhat_Y)``, which never exceeds one because every minor of
``Lhat`` dominates the corresponding minor of ``L``.  The expected number
of rounds per accepted sample is ``U = det(Lhat + I) / det(L + I)``.
"""

import math
import sys
from dataclasses import dataclass

import numpy as np

from .errors import DominationViolation, RejectionBudgetExceeded
from .kernel import build_proposal, rejection_constant
from .tree import construct_tree, sample_dpp

ACCEPT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RejectionSampler:
    factors: object
    proposal: object
    tree: object
    constant: object

    @property
    def U(self):
        return self.constant.U

    @property
    def omega(self):
        return self.constant.omega


@dataclass
class RejectionStats:
    """Running counters; one instance may be shared by many calls."""

    draws: int = 0
    rounds: int = 0
    max_acceptance: float = 0.0
    sum_acceptance: float = 0.0
    negative_minors: int = 0

    @property
    def rejections(self):
        return self.rounds - self.draws

    @property
    def mean_rounds(self):
        return self.rounds / self.draws if self.draws else float("nan")

    @property
    def mean_acceptance(self):
        return self.sum_acceptance / self.rounds if self.rounds else float("nan")


def preprocess(f, leaf_size=1):
    """Youla decomposition, proposal eigenpairs and sampling tree for ``f``."""
    proposal = build_proposal(f)
    tree = construct_tree(proposal.eigvecs, leaf_size=leaf_size)
    return RejectionSampler(f, proposal, tree, rejection_constant(f, proposal))


def default_max_rounds(U):
    if not math.isfinite(U) or U > sys.maxsize / 100:
        return sys.maxsize
    return max(1, math.ceil(100.0 * U))


def acceptance_ratio(s, Y):
    """``(det(L_Y) / det(Lhat_Y), sign of det(L_Y))``.

    Both minors share the factor ``Z_Y``; with ``Z_Y^T = q R`` the ratio is
    ``det(q^T X q) / det(q^T Xhat q)`` and ``det(R)^2`` cancels, which keeps
    the ratio accurate when ``Z_Y`` is badly conditioned.
    """
    Y = np.asarray(Y, dtype=np.int64)
    if Y.size == 0:
        return 1.0, 1.0
    prop = s.proposal
    ZY = prop.Z[Y]
    if Y.size > ZY.shape[1]:
        return 0.0, 0.0
    q = np.linalg.qr(ZY.T)[0]
    sign_l, ld_l = np.linalg.slogdet(q.T @ prop.X @ q)
    sign_h, ld_h = np.linalg.slogdet((q.T * prop.xhat) @ q)
    if sign_l <= 0 or sign_h <= 0:
        return 0.0, float(sign_l)
    return float(np.exp(ld_l - ld_h)), 1.0


def sample_reject(s, rng, max_rounds=None, stats=None):
    """Draw one exact NDPP sample; returns ``(items, rounds used)``.

    Raises ``DominationViolation`` if an acceptance ratio exceeds
    ``1 + 1e-8`` and ``RejectionBudgetExceeded`` after ``max_rounds``
    proposals (default ``ceil(100 U)``).
    """
    if max_rounds is None:
        max_rounds = default_max_rounds(s.U)
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    best = 0.0
    for rounds in range(1, max_rounds + 1):
        Y = sample_dpp(s.tree, s.proposal.eigvals, rng)
        u = rng.random()
        p, sign = acceptance_ratio(s, Y)
        if p > 1.0 + ACCEPT_TOL:
            raise DominationViolation(f"acceptance ratio {p!r} for proposal {Y.tolist()}")
        best = max(best, p)
        if stats is not None:
            stats.rounds += 1
            stats.sum_acceptance += p
            stats.max_acceptance = max(stats.max_acceptance, p)
            stats.negative_minors += sign < 0
        if u < p:
            if stats is not None:
                stats.draws += 1
            return Y, rounds
    raise RejectionBudgetExceeded(max_rounds, best)
