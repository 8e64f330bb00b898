"""The Lyapunov-type operators L, L*, S, U and their Kronecker matrices.

    L(X)  = A^T X + X A + sum_ij k_ij N_i^T X N_j
    L*(X) = A X + X A^T + sum_ij k_ij N_i X N_j^T
    S(X)  = X B + sum_ij k_ij N_i^T X M_j
    U(X)  = gamma I - sum_ij k_ij M_i^T X M_j

vec() is column stacking throughout, so vec(A X B) = (B^T kron A) vec(X).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError

#: Largest state dimension for which dense n^2 x n^2 Kronecker matrices are formed.
DENSE_NMAX = 60


def sym(X):
    return 0.5 * (X + X.T)


def vec(X):
    return np.asarray(X).reshape(-1, order="F")


def unvec(x, rows, cols=None):
    cols = rows if cols is None else cols
    return np.asarray(x).reshape((rows, cols), order="F")


def _check_square(sys, X):
    X = np.asarray(X, dtype=float)
    if X.shape != (sys.n, sys.n):
        raise ValueError(f"X has shape {X.shape}, expected {(sys.n, sys.n)}")
    return X


def weighted_sum(K, left, X, right, transpose_left=True):
    """sum_ij k_ij op(L_i) X R_j with op = transpose (default) or identity.

    For q > 2 the sum is evaluated as the stacked product Lt^T (K kron X) Rt.
    """
    q = len(left)
    if q <= 2:
        acc = 0.0
        for i in range(q):
            Li = left[i].T if transpose_left else left[i]
            for j in range(q):
                if K[i, j] != 0.0:
                    acc = acc + K[i, j] * (Li @ X @ right[j])
        if np.isscalar(acc):
            rows = left[0].shape[1] if transpose_left else left[0].shape[0]
            return np.zeros((rows, right[0].shape[1]))
        return acc
    Lstack = np.vstack([Li if transpose_left else Li.T for Li in left])
    Rstack = np.vstack(list(right))
    return Lstack.T @ np.kron(K, X) @ Rstack


def op_L(sys, X):
    X = _check_square(sys, X)
    R = sys.A.T @ X + X @ sys.A + weighted_sum(sys.K, sys.N, X, sys.N)
    return sym(R)


def op_Lstar(sys, X):
    X = _check_square(sys, X)
    Nt = [Ni.T for Ni in sys.N]
    R = sys.A @ X + X @ sys.A.T + weighted_sum(sys.K, Nt, X, Nt)
    return sym(R)


def op_S(sys, X):
    X = _check_square(sys, X)
    return X @ sys.B + weighted_sum(sys.K, sys.N, X, sys.M)


def op_U(sys, X, gamma=1.0):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    X = _check_square(sys, X)
    R = gamma * np.eye(sys.m) - weighted_sum(sys.K, sys.M, X, sys.M)
    return sym(R)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    kind: str
    matrix: np.ndarray
    system: object

    def apply(self, X):
        n = self.system.n
        return unvec(self.matrix @ vec(X), n)


def kron_matrix(sys, kind, n_max=DENSE_NMAX):
    """Dense n^2 x n^2 matrix of L (kind ``"L"``) or L* (kind ``"Lstar"``)."""
    if kind not in ("L", "Lstar"):
        raise ValueError(f"kind must be 'L' or 'Lstar', got {kind!r}")
    n = sys.n
    if n > n_max:
        raise CapacityError(f"n={n} exceeds dense Kronecker limit n_max={n_max}")
    I = np.eye(n)
    Lstar = np.kron(I, sys.A) + np.kron(sys.A, I)
    for i, Ni in enumerate(sys.N):
        for j, Nj in enumerate(sys.N):
            if sys.K[i, j] != 0.0:
                Lstar += sys.K[i, j] * np.kron(Nj, Ni)
    mat = Lstar if kind == "Lstar" else Lstar.T.copy()
    return OperatorMatrix(kind, mat, sys)


@dataclass(frozen=True)
class PSDCheck:
    is_psd: bool
    min_eig: float


def psd_check(X, tol=1e-8):
    """is_psd iff min eigenvalue >= -tol * max(1, max eigenvalue)."""
    ev = np.linalg.eigvalsh(sym(np.asarray(X, dtype=float)))
    lo, hi = float(ev[0]), float(ev[-1])
    return PSDCheck(lo >= -tol * max(1.0, hi), lo)
