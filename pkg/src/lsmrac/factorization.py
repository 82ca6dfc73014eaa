"""Triangular factorizations of the high-frequency gain matrix.

The adaptive law only needs the signs of the diagonal factor, but the
analysis layer needs the full symmetric/diagonal/unit-upper split together
with a certificate that the symmetric factor is compatible with the chosen
reference-model dynamics. Everything here is dense, small-m linear algebra.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonPositiveDplus, SearchExhausted, SingularMinor

#: Default absolute tolerance on row-norm-scaled leading minors.
MINOR_TOL = 1e-10

#: Doubling-search cap for the geometric scaling parameter.
DPLUS_CAP = float(2 ** 60)


@dataclass(frozen=True)
class LduResult:
    """Unit-triangular factorization ``K = Lp @ Dp @ Up``."""

    Lp: np.ndarray     # unit lower triangular
    Dp: np.ndarray     # diagonal, entries are ratios of consecutive minors
    Up: np.ndarray     # unit upper triangular
    minors: np.ndarray  # leading principal minors, length m

    @property
    def dp_diag(self) -> np.ndarray:
        return np.diag(self.Dp).copy()


@dataclass(frozen=True)
class SduResult:
    """Factorization ``K = S @ D @ U`` with S symmetric positive definite,
    D diagonal and U unit upper triangular."""

    S: np.ndarray
    D: np.ndarray
    U: np.ndarray
    Dplus: np.ndarray
    sign_d: np.ndarray  # entries in {+1, -1}

    @property
    def d_diag(self) -> np.ndarray:
        return np.diag(self.D).copy()


def _as_square(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise ValueError("matrix has non-finite entries")
    return K


def leading_minors(K) -> np.ndarray:
    """Leading principal minors of K, smallest block first.

    Each minor is the determinant of the top-left i-by-i block, evaluated
    by (pivoted) elimination on that block. Zero minors are returned as
    values; callers that need invertibility must reject them.
    """
    K = _as_square(K)
    m = K.shape[0]
    return np.array([np.linalg.det(K[:i, :i]) for i in range(1, m + 1)])


def _check_minors(K: np.ndarray, tol: float) -> None:
    """Reject near-singular leading blocks, scale-invariantly.

    Rows are normalized before taking minors so that uniformly tiny or huge
    matrices are not misclassified.
    """
    norms = np.linalg.norm(K, axis=1)
    norms[norms == 0.0] = 1.0
    scaled = leading_minors(K / norms[:, None])
    for i, value in enumerate(scaled, start=1):
        if abs(value) <= tol:
            raise SingularMinor(i, value)


def ldu_factor(K, tol: float = MINOR_TOL) -> LduResult:
    """Unique factorization K = Lp Dp Up with unit-triangular Lp, Up.

    Raises SingularMinor(i) when the i-th scaled leading minor is within
    ``tol`` of zero, which means the factorization does not exist.
    """
    K = _as_square(K)
    m = K.shape[0]
    _check_minors(K, tol)
    minors = leading_minors(K)

    # Doolittle elimination without pivoting; pivots are minor ratios and
    # are bounded away from zero by the check above.
    U = K.copy()
    Lp = np.eye(m)
    for k in range(m - 1):
        mult = U[k + 1:, k] / U[k, k]
        Lp[k + 1:, k] = mult
        U[k + 1:, k:] -= np.outer(mult, U[k, k:])
    dp = np.diag(U).copy()
    Up = np.triu(U / dp[:, None], 1) + np.eye(m)
    return LduResult(Lp=Lp, Dp=np.diag(dp), Up=Up, minors=minors)


def dplus_geometric(d_plus: float, m: int) -> np.ndarray:
    """Diagonal scaling diag{1, d^2, d^4, ...} with geometrically growing
    entries; the shape that makes the scaled lower factor approach identity."""
    if d_plus <= 0.0:
        raise NonPositiveDplus(f"d_plus must be positive, got {d_plus}")
    return np.diag(d_plus ** (2.0 * np.arange(m)))


def lplus(Lp, d_plus: float) -> np.ndarray:
    """Rescale a unit lower factor so entry (i, j) becomes l_ij / d^(i-j).

    Equal to Dplus^{-1/2} Lp Dplus^{1/2} for the geometric Dplus; the
    off-diagonal mass shrinks like 1/d_plus.
    """
    Lp = _as_square(Lp)
    if d_plus <= 0.0:
        raise NonPositiveDplus(f"d_plus must be positive, got {d_plus}")
    m = Lp.shape[0]
    i, j = np.indices((m, m))
    return Lp / (float(d_plus) ** (i - j))


def sdu_factor(K, Dplus, tol: float = MINOR_TOL) -> SduResult:
    """Factor K = S D U for a chosen positive diagonal Dplus.

    S = Lp Dplus Lp^T is symmetric positive definite, D = Dplus^{-1} Dp is
    diagonal, and U = D^{-1} Lp^{-T} D Up is unit upper triangular with
    structural zeros below the diagonal. The diagonal signs of D equal the
    signs of the minor ratios regardless of Dplus.
    """
    K = _as_square(K)
    m = K.shape[0]
    Dplus = np.asarray(Dplus, dtype=float)
    dplus = np.diag(Dplus).copy() if Dplus.ndim == 2 else Dplus.copy()
    if dplus.shape != (m,):
        raise ValueError("Dplus dimension does not match K")
    if np.any(dplus <= 0.0) or not np.all(np.isfinite(dplus)):
        raise NonPositiveDplus(f"Dplus diagonal must be positive, got {dplus}")

    ldu = ldu_factor(K, tol=tol)
    Lp, dp, Up = ldu.Lp, ldu.dp_diag, ldu.Up

    S = (Lp * dplus) @ Lp.T
    S = 0.5 * (S + S.T)
    d = dp / dplus
    Lp_invT = scipy.linalg.solve_triangular(
        Lp.T, np.eye(m), lower=False, unit_diagonal=True)
    U = (Lp_invT * d) / d[:, None] @ Up
    U = np.triu(U, 1) + np.eye(m)
    return SduResult(S=S, D=np.diag(d), U=U, Dplus=np.diag(dplus),
                     sign_d=np.sign(dp))


def is_spd(M, tol: float = 1e-10) -> bool:
    """True iff M is symmetric (to tol * ||M||) and Cholesky succeeds."""
    M = _as_square(M)
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > tol * scale:
        return False
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        return False
    return True


def find_dplus(K, Am, tol: float = MINOR_TOL, cap: float = DPLUS_CAP):
    """Smallest doubling-sequence d_plus whose scaled lower factor passes the
    negativity test Lplus Lplus^T Am + Am Lplus Lplus^T < 0.

    Returns (d_plus, Q) where Q = -(Am S^{-1} + S^{-1} Am)/2 is the certified
    positive definite matrix for the corresponding factorization. Doubling is
    enough because every d_plus beyond the threshold also passes.
    """
    K = _as_square(K)
    Am = _as_square(Am)
    m = K.shape[0]
    if Am.shape != K.shape:
        raise ValueError("Am dimension does not match K")
    if np.any(Am - np.diag(np.diag(Am))) or np.any(np.diag(Am) >= 0.0):
        raise ValueError("Am must be diagonal with strictly negative entries")

    Lp = ldu_factor(K, tol=tol).Lp
    d_plus = 1.0
    while d_plus <= cap:
        L1 = lplus(Lp, d_plus)
        G = L1 @ L1.T
        T = G @ Am + Am @ G
        if is_spd(-T):
            sdu = sdu_factor(K, dplus_geometric(d_plus, m), tol=tol)
            S_inv = np.linalg.inv(sdu.S)
            Q = -0.5 * (Am @ S_inv + S_inv @ Am)
            return d_plus, 0.5 * (Q + Q.T)
        d_plus *= 2.0
    raise SearchExhausted(
        f"no certified d_plus found below cap {cap:.3e}; numerically "
        "pathological input")
