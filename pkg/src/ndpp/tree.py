"""Sublinear-time sampling from a symmetric low-rank DPP.

The DPP is given by eigenpairs ``(lambda_i, z_i)`` of its kernel.  A draw
first picks an elementary DPP (independent coins with bias
``lambda_i / (lambda_i + 1)``) and then adds items one at a time by
descending a binary tree whose nodes cache ``sum_{j in A} z_j z_j^T`` over
their item range ``A``.

Nodes are stored breadth-first in flat arrays.  With ``leaf_size=1`` every
leaf holds one item.  Larger ``leaf_size`` stops the split at buckets of at
most that many items and finishes each descent with a direct scan of the
bucket; this divides tree memory by roughly ``leaf_size``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

DENOM_TOL = 1e-12
_LEAF_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class SampleTree:
    start: np.ndarray
    stop: np.ndarray
    left: np.ndarray
    right: np.ndarray
    level: np.ndarray
    sigma: np.ndarray
    rows: np.ndarray
    leaf_size: int = 1

    @property
    def M(self):
        return int(self.stop[0])

    @property
    def r(self):
        return self.sigma.shape[1]

    @property
    def n_nodes(self):
        return self.start.size

    @property
    def depth(self):
        return int(self.level.max())

    @property
    def nbytes(self):
        """Bytes held by the cached Gram blocks."""
        return int(self.sigma.nbytes)

    def is_leaf(self, node):
        return self.left[node] < 0


def tree_layout(M, leaf_size=1):
    """Breadth-first node ranges for halving splits (left gets the larger half)."""
    if M < 1:
        raise ValueError("tree needs at least one item")
    if leaf_size < 1:
        raise ValueError("leaf_size must be positive")
    start, stop, level = [0], [M], [0]
    left, right = [], []
    i = 0
    while i < len(start):
        a, b = start[i], stop[i]
        if b - a <= leaf_size:
            left.append(-1)
            right.append(-1)
        else:
            mid = a + (b - a + 1) // 2
            left.append(len(start))
            start.append(a)
            stop.append(mid)
            level.append(level[i] + 1)
            right.append(len(start))
            start.append(mid)
            stop.append(b)
            level.append(level[i] + 1)
        i += 1
    as_arr = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    return as_arr(start), as_arr(stop), as_arr(left), as_arr(right), as_arr(level)


def construct_tree(Z, leaf_size=1):
    """Build the tree over the rows of ``Z`` (``M x r``) in ``O(M r^2)``."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    M, r = Z.shape
    start, stop, left, right, level = tree_layout(M, leaf_size)
    sigma = np.empty((start.size, r, r))
    leaves = np.flatnonzero(left < 0)
    if leaf_size == 1:
        for c in range(0, leaves.size, _LEAF_CHUNK):
            ids = leaves[c : c + _LEAF_CHUNK]
            rows = Z[start[ids]]
            sigma[ids] = rows[:, :, None] * rows[:, None, :]
    else:
        for node in leaves:
            block = Z[start[node] : stop[node]]
            np.matmul(block.T, block, out=sigma[node])
    internal = np.flatnonzero(left >= 0)
    for lvl in range(int(level.max()) - 1, -1, -1):
        ids = internal[level[internal] == lvl]
        sigma[ids] = sigma[left[ids]] + sigma[right[ids]]
    for a in (start, stop, left, right, level, sigma):
        a.setflags(write=False)
    return SampleTree(start, stop, left, right, level, sigma, Z, int(leaf_size))


def sample_elementary_indices(eigvals, rng):
    """Independent coins: index ``i`` kept with probability ``l_i / (l_i + 1)``."""
    lam = np.asarray(eigvals, dtype=np.float64)
    u = rng.random(lam.size)
    return np.flatnonzero(u < lam / (lam + 1.0))


class _Scorer:
    """Evaluates ``<Q, Sigma_E>`` at tree nodes for a fixed ``(Q, E)``.

    When ``E`` covers more than half the columns it is cheaper to embed
    ``Q`` into an ``r x r`` zero matrix once than to gather ``Sigma_E`` at
    every node.
    """

    def __init__(self, tree, Q, E):
        self.tree = tree
        self.E = E
        r = tree.r
        if 2 * E.size > r:
            full = np.zeros((r, r))
            full[np.ix_(E, E)] = Q
            self.flat = full.ravel()
            self.sig = tree.sigma.reshape(tree.n_nodes, r * r)
            self.Q = None
        else:
            self.Q = np.ascontiguousarray(Q)
            self.ix = np.ix_(E, E)

    def __call__(self, node):
        if self.Q is None:
            return float(self.sig[node] @ self.flat)
        return float(np.vdot(self.Q, self.tree.sigma[node][self.ix]))


def sample_item(tree, Q, E, rng):
    """Draw one item with probability ``z_{j,E} Q z_{j,E}^T / <Q, Sigma_E>``.

    Consumes one uniform per tree level, plus one at a multi-item leaf.
    """
    E = np.asarray(E, dtype=np.int64)
    score = _Scorer(tree, Q, E)
    left, right = tree.left, tree.right
    node = 0
    total = score(0)
    if not total > DENOM_TOL:
        raise NumericalError(f"root mass {total:.3e} is not positive")
    while left[node] >= 0:
        l_node = left[node]
        p_left = score(l_node)
        if rng.random() * total < p_left:
            node, total = l_node, p_left
        else:
            node = right[node]
            total = score(node)
            if not total > 0.0:
                raise NumericalError(f"descended into subtree {node} with mass {total:.3e}")
    a, b = int(tree.start[node]), int(tree.stop[node])
    if b - a == 1:
        return a
    rows = tree.rows[a:b][:, E]
    w = np.clip(np.sum((rows @ Q) * rows, axis=1), 0.0, None)
    c = np.cumsum(w)
    j = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return a + min(j, b - a - 1)


def _complement_projector(A):
    """``I - A^T (A A^T)^{-1} A`` for a full-row-rank ``A`` (``y x k``)."""
    q, rr = np.linalg.qr(A.T)
    d = np.abs(np.diag(rr))
    if d.size and d.min() <= 1e-10 * max(1.0, d.max()):
        raise NumericalError("Z_{Y,E} Z_{Y,E}^T is singular")
    return np.eye(A.shape[1]) - q @ q.T


def sample_dpp(tree, eigvals, rng):
    """One draw from the DPP with eigenpairs ``(eigvals, tree.rows)``.

    Returns sorted item ids; the set size equals the number of elementary
    indices chosen.
    """
    E = sample_elementary_indices(eigvals, rng)
    k = E.size
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    Q = np.eye(k)
    Y = []
    for step in range(k):
        Y.append(sample_item(tree, Q, E, rng))
        if step + 1 < k:
            Q = _complement_projector(tree.rows[np.ix_(Y, E)])
    return np.sort(np.asarray(Y, dtype=np.int64))
