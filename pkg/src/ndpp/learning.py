"""Maximum-likelihood learning of orthogonal NDPP kernels, plus evaluation metrics.

The kernel is ``L = V V^T + B C B^T`` where ``B`` has orthonormal columns,
``V^T B = 0`` and ``C`` is block diagonal with blocks ``[[0, s], [-s, 0]]``,
``s >= 0``.  Training minimises

    -(1/n) sum_i [logdet(L_{Y_i} + eps I) - logdet(L + I)]
      + alpha sum_i |v_i|^2 / mu_i + beta sum_i |b_i|^2 / mu_i
      + gamma sum_j log(1 + 2 s_j / (s_j^2 + 1))

by minibatch gradient descent, re-projecting onto the constraint set after
every step.  The last term is ``log U`` for the rejection sampler.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericalError, TrainingDiverged
from .io import parse_baskets
from .kernel import KernelFactors
from .rng import stream

# --------------------------------------------------------------------------
# Data and parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BasketDataset:
    baskets: list
    M: int
    mu: np.ndarray = field(default=None)

    def __post_init__(self):
        bs = [np.asarray(b, dtype=np.int64) for b in self.baskets]
        for n, b in enumerate(bs):
            if b.size == 0:
                raise ValueError(f"basket {n} is empty")
            if b.min() < 0 or b.max() >= self.M:
                raise ValueError(f"basket {n} has an item id outside [0, {self.M})")
            if np.unique(b).size != b.size:
                raise ValueError(f"basket {n} repeats an item")
        mu = np.zeros(self.M, dtype=np.int64)
        for b in bs:
            mu[b] += 1
        object.__setattr__(self, "baskets", bs)
        object.__setattr__(self, "mu", mu)

    def __len__(self):
        return len(self.baskets)

    def subset(self, idx):
        return BasketDataset([self.baskets[i] for i in idx], self.M)


def load_baskets(path, M=None) -> BasketDataset:
    """Read a basket file; ``M`` defaults to one more than the largest id."""
    with open(path, encoding="utf-8") as fh:
        parsed = parse_baskets(fh, allow_empty=False)
    if not parsed:
        raise FormatError(f"{path}: no baskets (no training data)")
    if M is None:
        M = 1 + max(int(b.max()) for _, b in parsed)
    for lineno, b in parsed:
        if b.max() >= M:
            raise FormatError(f"item id {int(b.max())} >= catalog size {M}", line=lineno)
    return BasketDataset([b for _, b in parsed], M)


@dataclass(frozen=True)
class LearnConfig:
    K: int = 4
    alpha: float = 0.01
    beta: float = 0.01
    gamma: float = 0.5
    step_size: float = 0.05
    epochs: int = 100
    batch_size: int = 800
    eps: float = 1e-5
    tol: float = 1e-5
    n_validation: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.K < 2 or self.K % 2:
            raise ValueError(f"K must be a positive even integer, got {self.K}")
        for name in ("alpha", "beta", "gamma", "eps", "tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.epochs < 0 or self.batch_size < 1 or self.n_validation < 0:
            raise ValueError("epochs and n_validation must be >= 0, batch_size >= 1")


@dataclass(frozen=True, eq=False)
class OndppParams:
    """``V`` (M x K), ``B`` (M x K) and the ``K/2`` skew strengths ``sigma``."""

    V: np.ndarray
    B: np.ndarray
    sigma: np.ndarray

    @property
    def M(self):
        return self.V.shape[0]

    @property
    def K(self):
        return self.V.shape[1]

    def skew(self):
        """``C = D - D^T`` with blocks ``[[0, s], [-s, 0]]``."""
        C = np.zeros((self.K, self.K))
        j = np.arange(self.sigma.size)
        C[2 * j, 2 * j + 1] = self.sigma
        C[2 * j + 1, 2 * j] = -self.sigma
        return C

    def D(self):
        D = np.zeros((self.K, self.K))
        j = np.arange(self.sigma.size)
        D[2 * j, 2 * j + 1] = self.sigma
        return D

    def to_factors(self, ondpp=True) -> KernelFactors:
        return KernelFactors(self.V, self.B, self.D(), ondpp=ondpp)

    @classmethod
    def from_factors(cls, f):
        """Inverse of ``to_factors`` for factors whose ``D`` has the block form."""
        K = f.K
        j = np.arange(K // 2)
        sigma = np.asarray(f.D[2 * j, 2 * j + 1], dtype=np.float64)
        expect = np.zeros((K, K))
        expect[2 * j, 2 * j + 1] = sigma
        if not np.array_equal(np.asarray(f.D), expect):
            raise ValueError("D is not block diagonal with [[0, s], [0, 0]] blocks")
        return cls(np.array(f.V), np.array(f.B), sigma)

    def constraint_gaps(self):
        """``(max |B^T B - I|, max |V^T B|, -min sigma)``."""
        gram = float(np.max(np.abs(self.B.T @ self.B - np.eye(self.K))))
        cross = float(np.max(np.abs(self.V.T @ self.B)))
        neg = float(max(0.0, -self.sigma.min())) if self.sigma.size else 0.0
        return gram, cross, neg

    def satisfies_constraints(self, tol=1e-8):
        return all(g <= tol for g in self.constraint_gaps())

    def rejection_constant(self):
        s = self.sigma
        return float(np.prod(1.0 + 2.0 * s / (s**2 + 1.0)))


def project(p: OndppParams) -> OndppParams:
    """Orthonormalise ``B`` by QR (positive diagonal) and remove ``span(B)`` from ``V``."""
    Q, R = np.linalg.qr(p.B)
    d = np.diag(R)
    scale = max(1.0, float(np.max(np.abs(d)))) if d.size else 1.0
    if d.size and np.min(np.abs(d)) <= 1e-10 * scale:
        raise NumericalError("B is rank deficient; cannot orthonormalise")
    Q = Q * np.sign(d)
    V = p.V - Q @ (Q.T @ p.V)
    return OndppParams(V, Q, np.array(p.sigma, dtype=np.float64))


def initial_params(M, K, rng) -> OndppParams:
    V = rng.uniform(0.0, 1.0, (M, K))
    B = rng.uniform(0.0, 1.0, (M, K))
    sigma = np.abs(rng.standard_normal(K // 2))
    return project(OndppParams(V, B, sigma))


# --------------------------------------------------------------------------
# Objective and gradient
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OndppGradient:
    V: np.ndarray
    B: np.ndarray
    sigma: np.ndarray


def _group_by_size(baskets):
    groups = {}
    for n, b in enumerate(baskets):
        groups.setdefault(b.size, []).append(n)
    return [(np.array(ids), np.stack([baskets[i] for i in ids])) for ids in groups.values()]


def _sigma_grad(gC):
    j = np.arange(gC.shape[0] // 2)
    return gC[2 * j, 2 * j + 1] - gC[2 * j + 1, 2 * j]


def _reg_weights(mu):
    return 1.0 / np.where(mu > 0, mu, 1).astype(np.float64)


def _evaluate(p, baskets, mu, cfg, grad):
    """Objective over ``baskets`` with the full-catalogue regulariser."""
    V, B, K = p.V, p.B, p.K
    C = p.skew()
    n = len(baskets)
    gV, gB, gC = np.zeros_like(V), np.zeros_like(B), np.zeros((K, K))

    ll = 0.0
    for ids, idx in _group_by_size(baskets):
        VY, BY = V[idx], B[idx]
        A = VY @ VY.transpose(0, 2, 1) + BY @ C @ BY.transpose(0, 2, 1)
        A += cfg.eps * np.eye(idx.shape[1])
        sign, ld = np.linalg.slogdet(A)
        if np.any(sign <= 0) or not np.all(np.isfinite(ld)):
            bad = int(ids[np.flatnonzero((sign <= 0) | ~np.isfinite(ld))[0]])
            raise NumericalError(f"L_Y + eps I is singular or not positive for basket {bad}")
        ll += float(ld.sum())
        if grad:
            G = np.linalg.inv(A).transpose(0, 2, 1)
            Gt = G.transpose(0, 2, 1)
            np.add.at(gV, idx, (G + Gt) @ VY)
            np.add.at(gB, idx, G @ BY @ C.T + Gt @ BY @ C)
            gC += np.einsum("nak,nab,nbl->kl", BY, G, BY)

    Z = np.hstack([V, B])
    X = np.zeros((2 * K, 2 * K))
    X[:K, :K] = np.eye(K)
    X[K:, K:] = C
    gram = Z.T @ Z
    An = np.eye(2 * K) + gram @ X
    sign, log_z = np.linalg.slogdet(An)
    if sign <= 0:
        raise NumericalError("det(L + I) is not positive")

    w = _reg_weights(mu)
    s = p.sigma
    reg = (
        cfg.alpha * float(np.sum(w * np.sum(V**2, axis=1)))
        + cfg.beta * float(np.sum(w * np.sum(B**2, axis=1)))
        + cfg.gamma * float(np.sum(np.log1p(2.0 * s / (s**2 + 1.0))))
    )
    value = -ll / n + float(log_z) + reg
    if not grad:
        return value, None

    G = np.linalg.inv(An).T
    gZ = Z @ (G @ X.T + X @ G.T)
    gX = gram @ G
    gV = -gV / n + gZ[:, :K] + 2.0 * cfg.alpha * w[:, None] * V
    gB = -gB / n + gZ[:, K:] + 2.0 * cfg.beta * w[:, None] * B
    g_sigma = _sigma_grad(-gC / n + gX[K:, K:])
    g_sigma += cfg.gamma * (2.0 - 2.0 * s) / ((s + 1.0) * (s**2 + 1.0))
    return value, OndppGradient(gV, gB, g_sigma)


def nll_objective(p, data, cfg):
    """Regularised negative log-likelihood of ``data`` (a ``BasketDataset``)."""
    value, _ = _evaluate(p, data.baskets, data.mu, cfg, grad=False)
    if not math.isfinite(value):
        raise NumericalError(f"objective is not finite ({value})")
    return value


def nll_gradient(p, data, cfg) -> OndppGradient:
    """Analytic gradient of ``nll_objective`` with respect to ``(V, B, sigma)``."""
    return _evaluate(p, data.baskets, data.mu, cfg, grad=True)[1]


def mean_log_likelihood(p, baskets, eps=1e-5):
    """Average of ``logdet(L_Y + eps I) - logdet(L + I)``, no regulariser."""
    cfg = LearnConfig(K=p.K, alpha=0.0, beta=0.0, gamma=0.0, eps=eps)
    value, _ = _evaluate(p, list(baskets), np.ones(p.M), cfg, grad=False)
    return -value


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_nll: float
    val_nll: float
    U: float
    step_size: float
    accepted: bool


def _step(p, g, lr):
    V = p.V - lr * g.V
    B = p.B - lr * g.B
    sigma = np.maximum(p.sigma - lr * g.sigma, 0.0)
    return project(OndppParams(V, B, sigma))


def _finite(p):
    return all(np.all(np.isfinite(a)) for a in (p.V, p.B, p.sigma))


def split_validation(data, cfg, rng):
    """Random train/validation split; validation size is capped at a fifth of the data."""
    n = len(data)
    n_val = min(cfg.n_validation, n // 5)
    perm = rng.permutation(n)
    return data.subset(np.sort(perm[n_val:])), [data.baskets[i] for i in np.sort(perm[:n_val])]


def train(data, cfg, rng=None, *, init=None, callback=None, history=None) -> OndppParams:
    """Projected minibatch gradient descent.

    An epoch that raises the training objective is discarded and the step
    size halved.  Training stops once the relative change of the validation
    NLL drops below ``cfg.tol`` or after ``cfg.epochs`` epochs.
    ``callback(params)`` runs after every projected step; ``history``
    (a list) receives one ``EpochLog`` per epoch.
    """
    rng = rng if rng is not None else stream(cfg.seed, "learn")
    train_set, val = split_validation(data, cfg, rng)
    if init is None:
        params = initial_params(data.M, cfg.K, rng)
    else:
        params = project(init)
    if params.K != cfg.K or params.M != data.M:
        raise ValueError("initial parameters do not match the data and config shapes")
    if cfg.epochs == 0:
        return params

    def val_nll(p):
        return -mean_log_likelihood(p, val or train_set.baskets, cfg.eps)

    try:
        best = nll_objective(params, train_set, cfg)
    except NumericalError as exc:
        raise TrainingDiverged(f"initial objective failed: {exc}", params) from exc
    prev_val = val_nll(params)
    lr = cfg.step_size
    n = len(train_set)
    for epoch in range(cfg.epochs):
        cand = params
        order = rng.permutation(n)
        try:
            for s in range(0, n, cfg.batch_size):
                batch = [train_set.baskets[i] for i in order[s : s + cfg.batch_size]]
                _, g = _evaluate(cand, batch, train_set.mu, cfg, grad=True)
                cand = _step(cand, g, lr)
                if not _finite(cand):
                    raise NumericalError("parameters became non-finite")
                if callback is not None:
                    callback(cand)
            value = nll_objective(cand, train_set, cfg)
        except NumericalError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", params) from exc

        if value > best:
            if history is not None:
                history.append(EpochLog(epoch, value, float("nan"), cand.rejection_constant(), lr, False))
            lr *= 0.5
            if lr < 1e-12 * cfg.step_size:
                break
            continue
        params, best = cand, value
        v = val_nll(params)
        if history is not None:
            history.append(EpochLog(epoch, value, v, params.rejection_constant(), lr, True))
        if abs(v - prev_val) <= cfg.tol * max(abs(prev_val), 1e-300):
            break
        prev_val = v
    return params


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def _core(p):
    K = p.K
    Z = np.hstack([p.V, p.B])
    X = np.zeros((2 * K, 2 * K))
    X[:K, :K] = np.eye(K)
    X[K:, K:] = p.skew()
    return Z, X


def next_item_scores(p, J, eps=1e-5):
    """``logdet(L_{J+i} + eps I) - logdet(L_J + eps I)`` for every item ``i``.

    Uses the Schur complement ``L_ii + eps - L_{iJ} (L_J + eps I)^{-1} L_{Ji}``;
    items in ``J`` score ``-inf``.
    """
    Z, X = _core(p)
    J = np.asarray(sorted(set(int(j) for j in J)), dtype=np.int64)
    diag = np.einsum("ij,jk,ik->i", Z, X, Z) + eps
    if J.size == 0:
        s = diag
    else:
        ZJ = Z[J]
        A = ZJ @ X @ ZJ.T + eps * np.eye(J.size)
        row = Z @ X @ ZJ.T  # L_{i, J}
        col = ZJ @ X @ Z.T  # L_{J, i}
        s = diag - np.einsum("ij,ji->i", row, np.linalg.solve(A, col))
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(s > 0, np.log(np.where(s > 0, s, 1.0)), -np.inf)
    scores[J] = -np.inf
    return scores


def _scorer(model, eps):
    if callable(model):
        return model
    return lambda J: next_item_scores(model, J, eps)


def mean_percentile_rank(model, baskets, rng, eps=1e-5):
    """MPR over ``baskets`` (100 is perfect, 50 is chance).

    ``model`` is ``OndppParams`` or a callable mapping an observed item set
    to a length-``M`` score vector.  Ties count in the held-out item's
    favour (``>=``).  Baskets with fewer than two items are skipped.
    """
    score = _scorer(model, eps)
    ranks, skipped = [], 0
    for Y in baskets:
        Y = np.asarray(Y, dtype=np.int64)
        if Y.size < 2:
            skipped += 1
            continue
        k = int(rng.integers(Y.size))
        i, J = int(Y[k]), np.delete(Y, k)
        s = np.asarray(score(J), dtype=np.float64)
        cand = np.ones(s.size, dtype=bool)
        cand[J] = False
        ranks.append(100.0 * np.count_nonzero(s[i] >= s[cand]) / np.count_nonzero(cand))
    if skipped:
        warnings.warn(f"skipped {skipped} baskets with fewer than two items", RuntimeWarning, stacklevel=2)
    if not ranks:
        raise ValueError("no basket with at least two items")
    return float(np.mean(ranks))


def auc_from_scores(pos, neg):
    """Probability that a positive outscores a negative, ties counting one half."""
    pos, neg = np.asarray(pos, float), np.asarray(neg, float)
    neg_sorted = np.sort(neg)
    lo = np.searchsorted(neg_sorted, pos, side="left")
    hi = np.searchsorted(neg_sorted, pos, side="right")
    return float(np.sum(lo + 0.5 * (hi - lo)) / (pos.size * neg.size))


def discrimination_auc(model, baskets, rng, M=None, eps=1e-5):
    """AUC of observed baskets against same-size uniformly random subsets.

    ``model`` is ``OndppParams`` or a callable returning the log-likelihood
    of an item set; a callable needs the catalogue size ``M``.
    """
    if callable(model):
        if M is None:
            raise ValueError("M is required when model is a callable")
        loglik = model
    else:
        def loglik(Y):
            return mean_log_likelihood(model, [np.asarray(Y)], eps)
        M = model.M
    obs, rnd = [], []
    for Y in baskets:
        Y = np.asarray(Y, dtype=np.int64)
        R = np.sort(rng.choice(M, size=Y.size, replace=False))
        obs.append(loglik(Y))
        rnd.append(loglik(R))
    return auc_from_scores(obs, rnd)
