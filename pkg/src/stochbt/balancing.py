"""Balancing transformations, Hankel singular values and truncation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import operators as ops
from .errors import BalancingError, NumericalError

Q_PD_THRESHOLD = 1e-12
CLUSTER_GAP = 1e-8

_KIND_BY_ROLE = {"reach_lmi": "control", "reach_type1": "initial_state"}


@dataclass(eq=False)
class BalancedRealization:
    Tmat: np.ndarray
    Tinv: np.ndarray
    sigma: np.ndarray
    system: object
    pair_kind: str
    gamma: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.sigma.size


@dataclass(eq=False)
class ReducedModel:
    """Leading r x r block of a balanced realization.

    ``system`` is a ready-to-simulate :class:`StochasticSystem`. For the
    control kind its initial map is zero; for the initial-state kind its
    input matrices and feedthrough are zero.
    """

    order: int
    kind: str
    system: object
    sigma_kept: np.ndarray
    sigma_truncated: np.ndarray

    @property
    def A11(self):
        return self.system.A

    @property
    def B1(self):
        return self.system.B if self.kind == "control" else None

    @property
    def C1(self):
        return self.system.C

    @property
    def D(self):
        return self.system.D

    @property
    def N11(self):
        return self.system.N

    @property
    def M1(self):
        return self.system.M if self.kind == "control" else None

    @property
    def X01(self):
        return self.system.X0 if self.kind == "initial_state" else None


def _orient(U):
    """Flip eigenvector signs so the first non-negligible entry is positive."""
    U = U.copy()
    for k in range(U.shape[1]):
        col = U[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))[0]
        if col[idx] < 0:
            U[:, k] = -col
    return U


def balance(sys, P_report, Q_report, ridge=False):
    """Simultaneously diagonalize P and Q with T = Sigma^1/2 U^T L_P^-1."""
    kind = _KIND_BY_ROLE.get(P_report.role)
    if kind is None:
        raise ValueError(f"P must be a reachability Gramian, got role {P_report.role!r}")
    if Q_report.role not in ("obs", "obs_eq"):
        raise ValueError(f"Q must be an observability Gramian, got role {Q_report.role!r}")
    P = ops.sym(np.asarray(P_report.G, dtype=float))
    Q = ops.sym(np.asarray(Q_report.G, dtype=float))
    n = P.shape[0]

    qev = np.linalg.eigvalsh(Q)
    if not qev[0] > Q_PD_THRESHOLD * qev[-1] or qev[-1] <= 0:
        if not ridge:
            raise BalancingError(
                f"observability Gramian is not positive definite (min eig {qev[0]:.3g}, "
                f"max eig {qev[-1]:.3g}); pass ridge=True to add {1e-10:g}*trace(Q)/n"
            )
        delta = 1e-10 * np.trace(Q) / n
        warnings.warn(f"regularizing Q with ridge {delta:.3g}", stacklevel=2)
        Q = Q + delta * np.eye(n)
    try:
        LP = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pev = np.linalg.eigvalsh(P)
        extra = "; pass ridge=True" if kind == "initial_state" else ""
        raise BalancingError(
            f"reachability Gramian is not positive definite (min eig {pev[0]:.3g}){extra}"
        ) from None
    if kind == "initial_state" and ridge:
        pev = np.linalg.eigvalsh(P)
        if not pev[0] > Q_PD_THRESHOLD * pev[-1]:
            delta = 1e-10 * np.trace(P) / n
            warnings.warn(f"regularizing P with ridge {delta:.3g}", stacklevel=2)
            P = P + delta * np.eye(n)
            LP = np.linalg.cholesky(P)

    H = ops.sym(LP.T @ Q @ LP)
    lam, U = np.linalg.eigh(H)
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], _orient(U[:, order])
    if lam[-1] <= 0:
        raise BalancingError(f"L_P^T Q L_P is singular (min eig {lam[-1]:.3g})")
    sigma = np.sqrt(lam)
    s4 = np.sqrt(sigma)
    Tmat = s4[:, None] * (U.T @ sla.solve_triangular(LP, np.eye(n), lower=True))
    Tinv = (LP @ U) / s4[None, :]

    Sig = np.diag(sigma)
    snorm = np.linalg.norm(Sig, "fro")
    diagnostics = {
        "inverse_residual": float(np.linalg.norm(Tmat @ Tinv - np.eye(n), "fro")),
        "P_balanced_residual": float(np.linalg.norm(Tmat @ P @ Tmat.T - Sig, "fro") / snorm),
        "Q_balanced_residual": float(np.linalg.norm(Tinv.T @ Q @ Tinv - Sig, "fro") / snorm),
    }
    if max(diagnostics["P_balanced_residual"], diagnostics["Q_balanced_residual"]) > 1e-8:
        warnings.warn(f"balancing residuals large: {diagnostics}", stacklevel=2)
    bsys = sys.transformed(Tmat, Tinv)
    return BalancedRealization(
        Tmat=Tmat, Tinv=Tinv, sigma=sigma, system=bsys, pair_kind=kind,
        gamma=getattr(P_report, "gamma", None), diagnostics=diagnostics,
    )


def hsv(P_report, Q_report):
    """Descending square roots of the eigenvalues of P Q."""
    P = np.asarray(getattr(P_report, "G", P_report), dtype=float)
    Q = np.asarray(getattr(Q_report, "G", Q_report), dtype=float)
    lam = np.linalg.eigvals(P @ Q)
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if np.max(np.abs(lam.imag), initial=0.0) > 1e-8 * scale:
        raise NumericalError("P Q has a non-real spectrum; are P and Q symmetric PSD?")
    lam = lam.real
    if lam.size and lam.min() < -1e-10 * scale:
        raise NumericalError(f"P Q has a negative eigenvalue {lam.min():.3g}")
    return np.sort(np.sqrt(np.clip(lam, 0.0, None)))[::-1]


def truncate(bal: BalancedRealization, r):
    n = bal.n
    if not (isinstance(r, (int, np.integer)) and 1 <= r <= n):
        raise ValueError(f"truncation order must satisfy 1 <= r <= {n}, got {r}")
    r = int(r)
    s = bal.sigma
    if r < n and s[r - 1] - s[r] < CLUSTER_GAP * s[0]:
        warnings.warn(
            f"truncating inside an HSV cluster (sigma_r={s[r - 1]:.6g}, sigma_r+1={s[r]:.6g})",
            stacklevel=2,
        )
    b = bal.system
    kw = dict(
        A=b.A[:r, :r], C=b.C[:, :r], N=tuple(Ni[:r, :r] for Ni in b.N), K=b.K,
        label=f"{b.label or 'system'}:r={r}",
    )
    if bal.pair_kind == "control":
        kw.update(B=b.B[:r], M=tuple(Mi[:r] for Mi in b.M), D=b.D, X0=np.zeros((r, b.d)))
    else:
        kw.update(
            B=np.zeros((r, b.m)), M=tuple(np.zeros((r, b.m)) for _ in b.M),
            D=np.zeros_like(b.D), X0=b.X0[:r],
        )
    rsys = type(b)(**kw)
    return ReducedModel(order=r, kind=bal.pair_kind, system=rsys,
                        sigma_kept=s[:r].copy(), sigma_truncated=s[r:].copy())


def verify_reduced_gramian(bal: BalancedRealization, r, gamma=None, tol=1e-8):
    """Check that Sigma_1 is a Gramian pair of the order-r truncation.

    Margins are min eigenvalues of U_1(Sigma_1^-1), of
    -(L_11(Sigma_1^-1) + S_1 U_1^-1 S_1^T) and of -(L_11(Sigma_1) + C_1^T C_1).
    """
    if bal.pair_kind != "control":
        raise ValueError("reduced Gramian inequalities apply to control-kind balancing")
    gamma = bal.gamma if gamma is None else gamma
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rom = truncate(bal, r)
    rs = rom.system
    S1 = np.diag(rom.sigma_kept)
    S1inv = np.diag(1.0 / rom.sigma_kept)
    Umat = ops.op_U(rs, S1inv, gamma)
    Lmat = ops.op_L(rs, S1inv)
    Smat = ops.op_S(rs, S1inv)
    u_min = float(np.linalg.eigvalsh(Umat)[0])
    out = {"order": int(r), "U_pd": u_min}
    if u_min > 0:
        R = Lmat + Smat @ np.linalg.solve(Umat, Smat.T)
        out["reach_ineq"] = float(np.linalg.eigvalsh(ops.sym(-R))[0])
    else:
        out["reach_ineq"] = -np.inf
    out["obs_ineq"] = float(np.linalg.eigvalsh(ops.sym(-(ops.op_L(rs, S1) + rs.C.T @ rs.C)))[0])
    out["passed"] = bool(u_min > 0 and out["reach_ineq"] >= -tol and out["obs_ineq"] >= -tol)
    return out


def write_hsv_csv(path, sigma, name="sigma"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", name])
        for k, s in enumerate(np.asarray(sigma, dtype=float), start=1):
            w.writerow([k, repr(float(s))])
