"""Linear-time sequential sampler working on the ``2K x 2K`` marginal core.

Items are visited in index order.  Item ``i`` is kept with probability
``p_i = z_i^T Q z_i`` where ``Q`` starts at ``W`` (``K = Z W Z^T``) and is
downdated by a rank-one term after every decision.  Exactly one uniform
is drawn per item, so a seed fixes the whole trace.
"""

import numpy as np
from scipy.linalg import blas

from .errors import DegenerateConditionalError, NumericalError
from .kernel import marginal_core

PROB_TOL = 1e-9
DIV_TOL = 1e-12
_BATCH_CHUNK = 16384


def _check_prob(p, i):
    if not (-PROB_TOL <= p <= 1.0 + PROB_TOL):
        raise NumericalError(f"conditional probability {p:.3e} at item {i} is outside [0, 1]")
    return min(max(p, 0.0), 1.0)


def _sweep(Z, W, u, record=None):
    dgemv, dger, ddot = blas.dgemv, blas.dger, blas.ddot
    Q = np.array(W, dtype=np.float64, order="F")
    chosen = []
    for i in range(Z.shape[0]):
        z = Z[i]
        Qz = dgemv(1.0, Q, z)
        zQ = dgemv(1.0, Q, z, trans=1)
        p = _check_prob(ddot(z, Qz), i)
        included = u[i] < p
        if record is not None:
            record.append((i, p, bool(included)))
        if included:
            chosen.append(i)
            d = p
        else:
            d = p - 1.0
        if abs(d) < DIV_TOL:
            raise DegenerateConditionalError(f"pivot {d:.3e} at item {i}")
        Q = dger(-1.0 / d, Qz, zQ, a=Q, overwrite_a=1)
    return np.array(chosen, dtype=np.int64)


def sample_cholesky(f, rng, core=None):
    """Draw one subset from the NDPP ``f``; returns sorted item ids."""
    core = core if core is not None else marginal_core(f)
    return _sweep(f.Z, core.W, rng.random(f.M))


def inclusion_trace(f, rng, core=None):
    """Like ``sample_cholesky`` but return ``[(item, p_i, included), ...]``."""
    core = core if core is not None else marginal_core(f)
    record = []
    _sweep(f.Z, core.W, rng.random(f.M), record)
    return record


def sample_cholesky_batch(f, n, rng, core=None):
    """``n`` independent draws, vectorised over draws.

    Consumes the generator exactly like ``n`` successive calls to
    ``sample_cholesky``.  Intended for small ``M`` where the per-item Python
    overhead of the scalar sweep dominates.
    """
    core = core if core is not None else marginal_core(f)
    Z, W, M = f.Z, core.W, f.M
    out = []
    for start in range(0, n, _BATCH_CHUNK):
        c = min(_BATCH_CHUNK, n - start)
        u = rng.random((c, M))
        Q = np.broadcast_to(W, (c,) + W.shape).copy()
        keep = np.zeros((c, M), dtype=bool)
        for i in range(M):
            z = Z[i]
            Qz = Q @ z
            zQ = z @ Q
            p = Qz @ z
            if np.any((p < -PROB_TOL) | (p > 1.0 + PROB_TOL)):
                bad = p[(p < -PROB_TOL) | (p > 1.0 + PROB_TOL)][0]
                raise NumericalError(
                    f"conditional probability {bad:.3e} at item {i} is outside [0, 1]"
                )
            p = np.clip(p, 0.0, 1.0)
            inc = u[:, i] < p
            keep[:, i] = inc
            d = np.where(inc, p, p - 1.0)
            if np.any(np.abs(d) < DIV_TOL):
                raise DegenerateConditionalError(f"pivot below {DIV_TOL:g} at item {i}")
            Q -= (Qz / d[:, None])[:, :, None] * zQ[:, None, :]
        out.extend(np.flatnonzero(row) for row in keep)
    return out
