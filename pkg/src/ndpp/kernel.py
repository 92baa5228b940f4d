"""Low-rank nonsymmetric kernels ``L = V V^T + B (D - D^T) B^T``.

Everything here works on the thin factors; no ``M x M`` matrix is formed
except by the explicit ``dense`` helpers, which exist for small-``M``
checks only.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import NumericalError, SingularKernelError

SIGMA_TOL = 1e-10
ORTHO_TOL = 1e-8
EIG_CLAMP_TOL = 1e-10


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def orthogonality_gaps(V, B):
    """Return ``(cross, gram)``.

    ``cross`` is ``max |V^T B|`` divided by ``max(1, |V|_col |B|_col)``
    (largest column norms), so it is absolute for O(1) factors and
    scale-free for large ``V``; ``gram`` is ``max |B^T B - I|``.
    """
    V = np.asarray(V, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if V.size:
        scale = float(np.max(np.linalg.norm(V, axis=0)) * np.max(np.linalg.norm(B, axis=0)))
        cross = float(np.max(np.abs(V.T @ B))) / max(1.0, scale)
    else:
        cross = 0.0
    gram = float(np.max(np.abs(B.T @ B - np.eye(B.shape[1])))) if B.size else 0.0
    return cross, gram


@dataclass(frozen=True, eq=False)
class KernelFactors:
    """The triple ``(V, B, D)`` of a rank-``2K`` NDPP kernel.

    ``ondpp=True`` asserts the orthogonality constraints ``V^T B = 0`` and
    ``B^T B = I`` (checked to ``ORTHO_TOL``; the cross term is relative to
    the column norms once they exceed one, see ``orthogonality_gaps``).
    """

    V: np.ndarray
    B: np.ndarray
    D: np.ndarray
    ondpp: bool = False

    def __post_init__(self):
        V, B, D = (np.asarray(a, dtype=np.float64) for a in (self.V, self.B, self.D))
        if V.ndim != 2 or B.ndim != 2 or D.ndim != 2:
            raise ValueError("V, B and D must be 2-d arrays")
        M, K = V.shape
        if B.shape != (M, K) or D.shape != (K, K):
            raise ValueError(
                f"shape mismatch: V {V.shape}, B {B.shape}, D {D.shape}; "
                "expected V, B of shape (M, K) and D of shape (K, K)"
            )
        if M < 1 or K < 2:
            raise ValueError(f"need M >= 1 and K >= 2, got M={M}, K={K}")
        if K % 2:
            raise ValueError(f"K must be even, got K={K}; use KernelFactors.padded")
        for name, a in (("V", V), ("B", B), ("D", D)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
        if self.ondpp:
            cross, gram = orthogonality_gaps(V, B)
            if cross > ORTHO_TOL or gram > ORTHO_TOL:
                raise ValueError(
                    f"ONDPP constraints violated: V^T B gap {cross:.2e}, "
                    f"|B^T B - I| {gram:.2e} (tolerance {ORTHO_TOL:g})"
                )
        # V and B are views into one [V, B] block so that Z costs nothing
        Z = np.hstack([V, B])
        Z.setflags(write=False)
        object.__setattr__(self, "_Z", Z)
        object.__setattr__(self, "V", Z[:, :K])
        object.__setattr__(self, "B", Z[:, K:])
        D = np.array(D, dtype=np.float64)
        D.setflags(write=False)
        object.__setattr__(self, "D", D)

    @classmethod
    def padded(cls, V, B, D, ondpp=False):
        """Build factors, appending a zero column/row when ``K`` is odd."""
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        D = np.atleast_2d(np.asarray(D, dtype=np.float64))
        if V.shape[1] % 2:
            V = np.pad(V, ((0, 0), (0, 1)))
            B = np.pad(B, ((0, 0), (0, 1)))
            D = np.pad(D, ((0, 1), (0, 1)))
        return cls(V, B, D, ondpp=ondpp)

    @property
    def M(self):
        return self.V.shape[0]

    @property
    def K(self):
        return self.V.shape[1]

    @cached_property
    def skew(self):
        """``D - D^T``."""
        return _readonly(self.D - self.D.T)

    @property
    def Z(self):
        """``[V, B]`` (``M x 2K``, read-only)."""
        return self._Z

    @cached_property
    def X(self):
        """Block core ``diag(I_K, D - D^T)`` so that ``L = Z X Z^T``."""
        K = self.K
        X = np.zeros((2 * K, 2 * K))
        X[:K, :K] = np.eye(K)
        X[K:, K:] = self.skew
        return _readonly(X)

    @cached_property
    def gram(self):
        """``Z^T Z`` assembled blockwise."""
        VtB = self.V.T @ self.B
        return _readonly(np.block([[self.V.T @ self.V, VtB], [VtB.T, self.B.T @ self.B]]))

    def dense(self):
        """Assemble the full ``M x M`` kernel. For small-``M`` checks only."""
        return self.V @ self.V.T + self.B @ self.skew @ self.B.T

    def is_v_perp_b(self, tol=ORTHO_TOL):
        return orthogonality_gaps(self.V, self.B)[0] <= tol


def random_factors(M, K, rng, *, ondpp=False, scale=1.0):
    """Gaussian factors for tests and the ``verify --random`` suite.

    With ``ondpp=True`` the columns of ``B`` are orthonormalised and ``V``
    is projected onto the orthogonal complement of ``B``.
    """
    V = scale * rng.standard_normal((M, K))
    B = scale * rng.standard_normal((M, K))
    D = rng.standard_normal((K, K))
    if ondpp:
        B = np.linalg.qr(B)[0]
        V = V - B @ (B.T @ V)
    return KernelFactors(V, B, D, ondpp=ondpp)


def orthogonalize(V, B, D):
    """Return ONDPP factors with the same skew part and ``V`` projected.

    ``B = Q R`` is replaced by ``Q`` and ``D`` by ``R D R^T`` (so
    ``B (D - D^T) B^T`` is unchanged); ``V`` loses its component in
    ``span(B)``.
    """
    Q, R = np.linalg.qr(np.asarray(B, dtype=np.float64))
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    Q, R = Q * s, R * s[:, None]
    V = np.asarray(V, dtype=np.float64)
    return KernelFactors(V - Q @ (Q.T @ V), Q, R @ np.asarray(D, dtype=np.float64) @ R.T, ondpp=True)


def kernel_entry(f, i, j):
    """``L[i, j] = v_i . v_j + b_i^T (D - D^T) b_j``."""
    M = f.M
    if not (0 <= i < M and 0 <= j < M):
        raise IndexError(f"item index out of range for M={M}: ({i}, {j})")
    return float(f.V[i] @ f.V[j] + f.B[i] @ f.skew @ f.B[j])


# --------------------------------------------------------------------------
# Youla decomposition of the skew part
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class YoulaForm:
    """``B (D - D^T) B^T = sum_j sigma_j (y_{2j-1} y_{2j}^T - y_{2j} y_{2j-1}^T)``.

    ``sigmas`` is non-increasing and strictly positive; ``vectors`` holds
    ``y_1, y_2, ...`` as columns (two per pair).
    """

    sigmas: np.ndarray
    vectors: np.ndarray

    @property
    def n_pairs(self):
        return self.sigmas.size

    @property
    def pairs(self):
        Y = self.vectors
        return [(float(s), Y[:, 2 * j], Y[:, 2 * j + 1]) for j, s in enumerate(self.sigmas)]

    def dense(self):
        Y1 = self.vectors[:, 0::2] * self.sigmas
        Y2 = self.vectors[:, 1::2]
        P = Y1 @ Y2.T
        return P - P.T


def youla_decompose(B, D, sigma_tol=SIGMA_TOL):
    """Youla form of the rank-``K`` skew matrix ``B (D - D^T) B^T``.

    Uses the ``K x K`` eigenproblem of ``(D - D^T) B^T B``: its nonzero
    eigenvalues are those of the ``M x M`` skew matrix, and an eigenvector
    ``z`` lifts to ``B z``.  Eigenvalues ``i*sigma`` with
    ``sigma <= sigma_tol * max(1, max|eta|)`` are dropped.
    Cost ``O(M K^2 + K^3)``.
    """
    B = np.asarray(B, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if B.ndim != 2 or D.shape != (B.shape[1], B.shape[1]):
        raise ValueError(f"incompatible shapes B {B.shape}, D {D.shape}")
    if B.shape[1] % 2:
        raise ValueError("K must be even")
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(D))):
        raise ValueError("non-finite input to youla_decompose")
    M = B.shape[0]
    C = D - D.T
    G = B.T @ B
    try:
        eta, zs = np.linalg.eig(C @ G)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed in youla_decompose: {exc}") from exc
    scale = max(1.0, float(np.max(np.abs(eta)))) if eta.size else 1.0
    keep = eta.imag > sigma_tol * scale
    if not np.any(keep):
        return YoulaForm(_readonly(np.zeros(0)), _readonly(np.zeros((M, 0))))
    eta, zs = eta[keep], zs[:, keep]
    order = np.argsort(-eta.imag, kind="stable")
    sigmas = eta.imag[order]
    zs = zs[:, order]

    # Make the lifted vectors B z orthonormal in C^M. For distinct sigmas this
    # is only a rescaling; inside a repeated sigma it also orthogonalises.
    H = zs.conj().T @ G @ zs
    H = 0.5 * (H + H.conj().T)
    try:
        R = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("lifted Youla vectors are linearly dependent") from exc
    zs = scipy.linalg.solve_triangular(R, zs.conj().T, lower=True).conj().T

    y_odd = B @ (zs.real - zs.imag)
    y_even = B @ (zs.real + zs.imag)
    Y = np.empty((M, 2 * sigmas.size))
    Y[:, 0::2] = y_odd / np.linalg.norm(y_odd, axis=0)
    Y[:, 1::2] = y_even / np.linalg.norm(y_even, axis=0)
    return YoulaForm(_readonly(sigmas), _readonly(Y))


# --------------------------------------------------------------------------
# Symmetric proposal kernel
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProposalKernel:
    """Symmetric PSD kernel ``Lhat = Z diag(xhat) Z^T`` and its eigenpairs.

    ``Z = [V, y_1, ..., y_{2p}]`` and ``xhat = (1,...,1, s_1, s_1, ...)``.
    ``eigvals`` are sorted non-increasing; ``eigvecs`` has orthonormal
    columns.  ``sigmas`` are the Youla values, kept so the nonsymmetric
    core ``X`` with ``L = Z X Z^T`` can be rebuilt.
    """

    Z: np.ndarray
    xhat: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    sigmas: np.ndarray
    K: int

    @property
    def M(self):
        return self.Z.shape[0]

    @property
    def rank(self):
        return self.eigvals.size

    @cached_property
    def X(self):
        """Core with 2x2 rotation blocks: ``L = Z X Z^T``."""
        K = self.K
        r = self.Z.shape[1]
        X = np.zeros((r, r))
        X[:K, :K] = np.eye(K)
        for j, s in enumerate(self.sigmas):
            a = K + 2 * j
            X[a, a + 1] = s
            X[a + 1, a] = -s
        return _readonly(X)

    def log_normalizer(self):
        """``log det(Lhat + I)``."""
        return float(np.sum(np.log1p(self.eigvals)))

    def dense(self):
        return (self.Z * self.xhat) @ self.Z.T


def build_proposal(f, youla=None):
    """Construct the dominating symmetric kernel of ``f``.

    The eigenpairs come from a thin QR of ``F = Z xhat^{1/2}`` followed by
    the eigendecomposition of the small ``R R^T``; cost ``O(M K^2)``.
    """
    yf = youla if youla is not None else youla_decompose(f.B, f.D)
    K = f.K
    Z = np.hstack([f.V, yf.vectors])
    xhat = np.concatenate([np.ones(K), np.repeat(yf.sigmas, 2)])
    F = Z * np.sqrt(xhat)
    Q, R = scipy.linalg.qr(F, mode="economic", check_finite=False)
    lam, U = np.linalg.eigh(R @ R.T)
    # reversed views have negative strides, which push matmul off BLAS
    lam, U = lam[::-1].copy(), np.ascontiguousarray(U[:, ::-1])
    floor = EIG_CLAMP_TOL * max(1.0, float(lam[0]) if lam.size else 1.0)
    if lam.size and lam[-1] < -floor:
        raise NumericalError(f"proposal eigenvalue {lam[-1]:.3e} is negative beyond tolerance")
    lam = np.clip(lam, 0.0, None)
    return ProposalKernel(
        Z=_readonly(Z),
        xhat=_readonly(xhat),
        eigvals=_readonly(lam),
        eigvecs=_readonly(Q @ U),
        sigmas=yf.sigmas,
        K=K,
    )


# --------------------------------------------------------------------------
# Marginal kernel, normalizer, minors
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarginalCore:
    """``W`` with marginal kernel ``K = Z W Z^T`` (``Z = [V, B]``)."""

    W: np.ndarray


def _normalizer_matrix(f):
    return np.eye(2 * f.K) + f.gram @ f.X


def marginal_core(f):
    """``W = X (I_2K + Z^T Z X)^{-1}`` by the Woodbury identity."""
    A = _normalizer_matrix(f)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond * np.finfo(float).eps > 1e-2:
        raise SingularKernelError("I + Z^T Z X is numerically singular", cond)
    # W A = X  <=>  A^T W^T = X^T
    W = np.linalg.solve(A.T, f.X.T).T
    return MarginalCore(_readonly(W))


def log_normalizer(f):
    """``log det(L + I) = log det(I_2K + Z^T Z X)`` via pivoted LU."""
    sign, ld = np.linalg.slogdet(_normalizer_matrix(f))
    if sign <= 0:
        raise NumericalError(
            f"det(L + I) has sign {sign:+.0f}; the factors do not define a valid NDPP"
        )
    return float(ld)


def _as_index_array(Y, M):
    Y = np.asarray(list(Y) if not isinstance(Y, np.ndarray) else Y, dtype=np.int64).ravel()
    if Y.size and (Y.min() < 0 or Y.max() >= M):
        raise IndexError(f"item set {Y.tolist()} out of range for M={M}")
    return Y


def submatrix(f, Y):
    """``L_Y`` assembled from rows of the factors in ``O(|Y|^2 K)``."""
    Y = _as_index_array(Y, f.M)
    VY, BY = f.V[Y], f.B[Y]
    return VY @ VY.T + BY @ f.skew @ BY.T


def submatrix_logdet(f, Y):
    """Signed log-determinant ``(sign, log|det L_Y|)`` of a principal minor."""
    Y = _as_index_array(Y, f.M)
    if Y.size == 0:
        return 1.0, 0.0
    if Y.size > 2 * f.K:
        return 0.0, -np.inf
    sign, ld = np.linalg.slogdet(submatrix(f, Y))
    return float(sign), float(ld)


# --------------------------------------------------------------------------
# Rejection constant
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RejectionConstant:
    """``U = det(Lhat + I) / det(L + I)`` and the bound parameter ``omega``.

    ``closed_form`` tells whether ``U`` came from the product over Youla
    values (valid when ``V`` is orthogonal to ``B``) or from the two
    log-normalizers.  ``log_U`` stays finite when ``U`` overflows.
    """

    U: float
    omega: float
    log_U: float
    closed_form: bool


def rejection_bound(rc, K):
    """``(1 + omega)^(K/2)``, the rank-only upper bound on ``U``."""
    return (1.0 + rc.omega) ** (K / 2)


def rejection_constant(f, proposal=None):
    """Expected number of proposal rounds per accepted sample.

    Closed form ``prod_j (1 + 2 s_j / (s_j^2 + 1))`` when ``V`` is
    orthogonal to ``B``; otherwise the ratio of normalizers.
    """
    youla_sigmas = proposal.sigmas if proposal is not None else youla_decompose(f.B, f.D).sigmas
    terms = 2.0 * youla_sigmas / (youla_sigmas**2 + 1.0)
    omega = float(2.0 / f.K * terms.sum())
    if f.is_v_perp_b():
        log_U = float(np.sum(np.log1p(terms)))
        closed = True
    else:
        if proposal is None:
            proposal = build_proposal(f)
        log_U = proposal.log_normalizer() - log_normalizer(f)
        closed = False
    U = float(np.exp(log_U)) if log_U < 700 else float("inf")
    return RejectionConstant(U=U, omega=omega, log_U=log_U, closed_form=closed)
