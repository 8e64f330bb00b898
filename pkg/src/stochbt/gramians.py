"""Reachability and observability Gramians.

Four roles are supported:

``reach_lmi``
    P > 0 with U(P^-1) > 0 and L(P^-1) + S(P^-1) U(P^-1)^-1 S(P^-1)^T <= 0
    (zero initial state, controlled diffusion). Built by scaling the solution
    of L(X) = -Y.
``obs``
    Q >= 0 with L(Q) + C^T C <= 0.
``reach_type1``
    solution of L*(P) + X0 X0^T = 0 (uncontrolled, non-zero initial state).
``obs_eq``
    solution of L(Q) + C^T C = 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import operators as ops
from .errors import GramianError, ParseError, UnstableSystemError
from .operators import DENSE_NMAX
from .system import stability_check

log = logging.getLogger(__name__)

ROLES = ("reach_lmi", "obs", "reach_type1", "obs_eq")
PSD_TOL = 1e-8
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class LMIOptions:
    """Settings of the epsilon-scaling construction."""

    Y: np.ndarray | None = None
    eps_cap: float = 1e6
    eps_floor: float = 1e-12
    bisection_steps: int = 60
    safety: float = 0.9
    tol: float = PSD_TOL


@dataclass(eq=False)
class GramianReport:
    G: np.ndarray
    role: str
    provenance: str
    gamma: float | None = None
    epsilon: float | None = None
    base_X: np.ndarray | None = None
    unconstrained: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown Gramian role {self.role!r}")
        if self.role == "reach_lmi" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError("reach_lmi Gramians need a positive gamma")

    @property
    def n(self):
        return self.G.shape[0]


def _require_stable(sys, n_max):
    st = stability_check(sys, n_max=n_max)
    if not st.stable:
        raise UnstableSystemError(st.spectral_abscissa)
    return st


def _kron_solve(sys, kind, rhs, n_max):
    Lmat = ops.kron_matrix(sys, kind, n_max=n_max).matrix
    x = sla.solve(Lmat, ops.vec(rhs))
    return ops.sym(ops.unvec(x, sys.n))


def _rel_residual(R, rhs):
    return float(np.linalg.norm(R, "fro") / max(1.0, np.linalg.norm(rhs, "fro")))


def _solve_equation(sys, role, n_max, tol):
    _require_stable(sys, n_max)
    if role == "reach_type1":
        rhs = sys.X0 @ sys.X0.T
        G = _kron_solve(sys, "Lstar", -rhs, n_max)
    else:
        rhs = sys.C.T @ sys.C
        G = _kron_solve(sys, "L", -rhs, n_max)
    report = GramianReport(G=G, role=role, provenance="equation_solved")
    report.diagnostics = verify_gramian(sys, report, tol=tol)
    if not report.diagnostics["passed"]:
        raise GramianError(
            f"{role} solution failed verification: {report.diagnostics['failures']}",
            report.diagnostics,
        )
    return report


def solve_type1_reach(sys, n_max=DENSE_NMAX, tol=PSD_TOL):
    """Solve L*(P) = -X0 X0^T by a dense Kronecker solve."""
    return _solve_equation(sys, "reach_type1", n_max, tol)


def solve_obs_eq(sys, n_max=DENSE_NMAX, tol=PSD_TOL):
    """Solve L(Q) = -C^T C by a dense Kronecker solve."""
    return _solve_equation(sys, "obs_eq", n_max, tol)


# --- epsilon construction ----------------------------------------------------


def _upper_margin(Mat, tol):
    """Margin of ``Mat <= 0``: min eigenvalue of -Mat and the strict verdict."""
    ev = np.linalg.eigvalsh(ops.sym(-Mat))
    scale = max(1.0, float(np.max(np.abs(ev))))
    return float(ev[0]), bool(ev[0] > -tol * scale)


def _pd_margin(Mat, tol):
    ev = np.linalg.eigvalsh(ops.sym(Mat))
    return float(ev[0]), bool(ev[0] > tol * max(1.0, float(ev[-1])))


def _reach_conditions(sys, Xinv, gamma, tol):
    """Evaluate U(Xinv) > 0 and L(Xinv) + S U^-1 S^T <= 0."""
    Umat = ops.op_U(sys, Xinv, gamma)
    u_min, u_ok = _pd_margin(Umat, tol)
    Lmat = ops.op_L(sys, Xinv)
    Smat = ops.op_S(sys, Xinv)
    if not u_ok:
        return dict(U_pd=u_min, reach_ineq=-np.inf, ok=False, L=Lmat, S=Smat, U=Umat)
    Rmat = Lmat + Smat @ np.linalg.solve(Umat, Smat.T)
    r_min, r_ok = _upper_margin(Rmat, tol)
    return dict(U_pd=u_min, reach_ineq=r_min, ok=u_ok and r_ok, L=Lmat, S=Smat, U=Umat)


def solve_lmi_reach(sys, gamma=1.0, opts: LMIOptions | None = None, n_max=DENSE_NMAX):
    """Reachability Gramian P = (s * eps * X)^-1 from L(X) = -Y.

    eps is the largest scaling for which ``eps X`` satisfies the inequality
    (doubling from 1 up to ``eps_cap`` then bisection); s is the safety factor.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    opts = opts or LMIOptions()
    _require_stable(sys, n_max)
    Y = np.eye(sys.n) if opts.Y is None else np.asarray(opts.Y, dtype=float)
    X = _kron_solve(sys, "L", -Y, n_max)
    x_min, x_ok = _pd_margin(X, 0.0)
    if not x_ok:
        raise GramianError(f"L(X) = -Y produced a non-positive-definite X (min eig {x_min:.3g})")

    evaluations = []

    def feasible(eps):
        ok = _reach_conditions(sys, eps * X, gamma, opts.tol)["ok"]
        evaluations.append((eps, ok))
        return ok

    def checked(eps):
        ok = feasible(eps)
        if ok and not feasible(0.5 * eps):
            raise GramianError(
                f"feasibility not monotone: eps={eps:.6g} feasible but eps/2 is not",
                {"evaluations": evaluations},
            )
        return ok

    unconstrained = False
    if checked(1.0):
        lo, hi = 1.0, None
        while lo < opts.eps_cap:
            trial = min(2.0 * lo, opts.eps_cap)
            if checked(trial):
                lo = trial
            else:
                hi = trial
                break
        if hi is None:
            unconstrained = True
    else:
        hi, lo = 1.0, None
        eps = 0.5
        while eps >= opts.eps_floor:
            if checked(eps):
                lo = eps
                break
            hi = eps
            eps *= 0.5
        if lo is None:
            raise GramianError(
                f"no feasible epsilon down to {opts.eps_floor:g}",
                {"evaluations": evaluations},
            )
    if not unconstrained:
        for _ in range(opts.bisection_steps):
            mid = 0.5 * (lo + hi)
            if checked(mid):
                lo = mid
            else:
                hi = mid
    else:
        log.info("epsilon unconstrained; capped at %g", opts.eps_cap)

    eps = opts.safety * lo
    P = ops.sym(np.linalg.inv(eps * X))
    report = GramianReport(
        G=P, role="reach_lmi", provenance="epsilon_constructed", gamma=float(gamma),
        epsilon=float(lo), base_X=X, unconstrained=unconstrained,
    )
    report.diagnostics = verify_gramian(sys, report, tol=opts.tol)
    report.diagnostics["epsilon_max"] = float(lo)
    report.diagnostics["epsilon_used"] = float(eps)
    report.diagnostics["n_evaluations"] = len(evaluations)
    if not report.diagnostics["passed"]:
        raise GramianError(
            f"epsilon-constructed Gramian failed verification: {report.diagnostics['failures']}",
            report.diagnostics,
        )
    return report


# --- verification ------------------------------------------------------------


def verify_gramian(sys, report: GramianReport, tol=PSD_TOL):
    """Margins (min eigenvalues) of every defining condition of ``report.role``.

    A ``<= 0`` condition passes when its margin exceeds ``-tol * scale``
    (strict), a ``> 0`` condition when the min eigenvalue exceeds
    ``tol * max(1, max eigenvalue)``. Returns a dict with the margins, a
    ``failures`` list and ``passed``.
    """
    G = np.asarray(report.G, dtype=float)
    diag = {"role": report.role, "tol": tol}
    failures = []
    if G.shape != (sys.n, sys.n):
        return dict(diag, passed=False, failures=[f"G has shape {G.shape}, expected {(sys.n, sys.n)}"])
    if np.max(np.abs(G - G.T)) > 1e-10 * max(1.0, np.max(np.abs(G))):
        failures.append("G not symmetric")
    G = ops.sym(G)
    ev = np.linalg.eigvalsh(G)
    diag["G_min_eig"] = float(ev[0])

    if report.role == "reach_lmi":
        if not ev[0] > tol * ev[-1] or ev[0] <= 0:
            failures.append("G not positive definite")
            return dict(diag, passed=False, failures=failures)
        Ginv = ops.sym(np.linalg.inv(G))
        cond = _reach_conditions(sys, Ginv, report.gamma, tol)
        diag["U_pd"] = cond["U_pd"]
        diag["reach_ineq"] = cond["reach_ineq"]
        if not cond["U_pd"] > tol * max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(cond["U"]))))):
            failures.append("U(G^-1) not positive definite")
        elif not _upper_margin(cond["L"] + cond["S"] @ np.linalg.solve(cond["U"], cond["S"].T), tol)[1]:
            failures.append("reachability inequality violated")
        block = np.block([[-cond["L"], cond["S"]], [cond["S"].T, cond["U"]]])
        bev = np.linalg.eigvalsh(ops.sym(block))
        diag["schur_block"] = float(bev[0])
        schur_ok = bool(bev[0] > -tol * max(1.0, float(np.max(np.abs(bev)))))
        direct_ok = not any(f.startswith(("U(", "reach")) for f in failures)
        diag["schur_agrees"] = schur_ok == direct_ok
        if not diag["schur_agrees"]:
            log.warning("Schur-complement form (%s) disagrees with direct form (%s)", schur_ok, direct_ok)
    else:
        if not ev[0] >= -tol * max(1.0, ev[-1]):
            failures.append("G not PSD")
        if report.role == "obs":
            m, ok = _upper_margin(ops.op_L(sys, G) + sys.C.T @ sys.C, tol)
            diag["obs_ineq"] = m
            if not ok:
                failures.append("observability inequality violated")
        else:
            if report.role == "reach_type1":
                rhs = sys.X0 @ sys.X0.T
                R = ops.op_Lstar(sys, G) + rhs
            else:
                rhs = sys.C.T @ sys.C
                R = ops.op_L(sys, G) + rhs
            diag["residual"] = _rel_residual(R, rhs)
            if diag["residual"] > RESIDUAL_TOL:
                failures.append(f"equation residual {diag['residual']:.3g} exceeds {RESIDUAL_TOL:g}")
    diag["failures"] = failures
    diag["passed"] = not failures
    return diag


def import_gramian(sys, G, role, gamma=None, tol=PSD_TOL):
    """Wrap an externally computed Gramian after verifying it."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    report = GramianReport(G=G, role=role, provenance="imported", gamma=gamma)
    report.diagnostics = verify_gramian(sys, report, tol=tol)
    if not report.diagnostics["passed"]:
        raise GramianError(
            "imported Gramian rejected: " + ", ".join(report.diagnostics["failures"]),
            report.diagnostics,
        )
    report.G = ops.sym(G)
    return report


def output_energy(sys, Q_report: GramianReport, x0):
    """x0^T Q x0; for an equation-solved Q this is E int_0^inf |C x(t)|^2 dt."""
    if Q_report.role not in ("obs", "obs_eq"):
        raise ValueError(f"need an observability Gramian, got role {Q_report.role!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (Q_report.n,):
        raise ValueError(f"x0 has {x0.size} entries, expected {Q_report.n}")
    return float(max(0.0, x0 @ Q_report.G @ x0))


# --- JSON --------------------------------------------------------------------


def gramian_to_dict(report: GramianReport):
    obj = {"role": report.role, "matrix": report.G.tolist()}
    if report.gamma is not None:
        obj["gamma"] = report.gamma
    return obj


def save_gramian(report, path):
    Path(path).write_text(json.dumps(gramian_to_dict(report), indent=1) + "\n")


def load_gramian(sys, path, tol=PSD_TOL):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    for key in ("role", "matrix"):
        if key not in obj:
            raise ParseError(f"missing required field {key!r}", field=key)
    return import_gramian(sys, obj["matrix"], obj["role"], obj.get("gamma"), tol=tol)
