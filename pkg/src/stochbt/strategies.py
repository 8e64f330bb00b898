"""End-to-end reduction pipelines for systems with non-zero initial states.

``approach1``
    Move the initial state into an extended input via an auxiliary
    uncontrolled system, then reduce the resulting zero-initial-state
    system with controlled diffusion.
``approach2``
    Reduce the control dynamics (zero initial state) and the initial-state
    dynamics (zero input) separately and add the two reduced outputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import operators as ops
from .balancing import BalancedRealization, ReducedModel, balance, truncate
from .errors import NumericalError, UnstableSystemError
from .gramians import LMIOptions, solve_lmi_reach, solve_obs_eq, solve_type1_reach
from .system import StochasticSystem, stability_check

BETA_ZERO = 1e-12
TRACE_CLAMP = 1e-10


@dataclass(frozen=True, eq=False)
class AuxiliarySpec:
    """Auxiliary system ``dx~ = At x~ dt + sum_i Nt_i x~ dw_i``, ``x~(0) = X0 v``.

    kind ``zero``: At = Nt_i = 0, so x~ = X0 v and u0 = I.
    kind ``scalar``: At = -alpha I, Nt_i = gammas[i] I, so
    u0(t) = exp((-alpha - 0.5 g^T K g) t + g^T w(t)) I.
    kind ``custom``: explicit ``Atilde``, ``Ntilde`` and ``V0``; needs a
    ``u0_path`` callable ``(t, W) -> u0`` where ``t`` has shape (steps,),
    ``W`` the accumulated Wiener paths (batch, steps, q), returning
    (batch, steps, r0, d), and an ``energy`` value for E int |u0|^2 dt.
    """

    kind: str = "zero"
    alpha: float = 0.0
    gammas: tuple = ()
    Atilde: np.ndarray | None = None
    Ntilde: tuple | None = None
    V0: np.ndarray | None = None
    u0_path: Callable | None = None
    energy: float | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "scalar", "custom"):
            raise ValueError(f"unknown auxiliary kind {self.kind!r}")
        object.__setattr__(self, "gammas", tuple(float(g) for g in np.ravel(self.gammas)))
        if self.kind == "custom" and (self.Atilde is None or self.Ntilde is None or self.V0 is None):
            raise ValueError("custom auxiliary spec needs Atilde, Ntilde and V0")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def scalar(cls, alpha, gammas):
        return cls("scalar", alpha=float(alpha), gammas=gammas)

    def gamma_vector(self, q):
        g = np.asarray(self.gammas, dtype=float)
        if g.size == 0:
            g = np.zeros(q)
        if g.shape != (q,):
            raise ValueError(f"scalar auxiliary spec has {g.size} gammas, system has q={q}")
        return g

    def beta(self, K):
        """Exponent of E|u0(t)|^2 = exp(beta t) for the scalar kind."""
        K = np.atleast_2d(K)
        g = self.gamma_vector(K.shape[0])
        return -2.0 * self.alpha + float(g @ K @ g)

    def matrices(self, sys):
        """(Atilde, [Ntilde_i], V0) for ``sys``."""
        n = sys.n
        if self.kind == "zero":
            return np.zeros((n, n)), [np.zeros((n, n))] * sys.q, np.asarray(sys.X0)
        if self.kind == "scalar":
            g = self.gamma_vector(sys.q)
            return -self.alpha * np.eye(n), [gi * np.eye(n) for gi in g], np.asarray(sys.X0)
        At = np.asarray(self.Atilde, dtype=float)
        Nt = [np.asarray(x, dtype=float) for x in self.Ntilde]
        V0 = np.atleast_2d(np.asarray(self.V0, dtype=float))
        if At.shape != (n, n) or len(Nt) != sys.q or any(x.shape != (n, n) for x in Nt):
            raise ValueError("custom auxiliary matrices do not match the system dimensions")
        if V0.shape[0] != n or np.linalg.matrix_rank(V0) != V0.shape[1]:
            raise ValueError("V0 must have n rows and full column rank")
        return At, Nt, V0

    def r0(self, sys):
        return self.matrices(sys)[2].shape[1]


def build_transformed_system(sys: StochasticSystem, aux: AuxiliarySpec):
    """Zero-initial-state system with extended input [u; u0 v]."""
    At, Nt, V0 = aux.matrices(sys)
    Bx = (sys.A - At) @ V0
    Mx = [(Ni - Nti) @ V0 for Ni, Nti in zip(sys.N, Nt)]
    if aux.kind == "custom" and not (np.any(Bx) or any(np.any(x) for x in Mx)):
        warnings.warn("auxiliary dynamics match the system; appended input columns are zero",
                      stacklevel=2)
    return sys.replace(
        B=np.hstack([sys.B, Bx]),
        M=tuple(np.hstack([Mi, Mxi]) for Mi, Mxi in zip(sys.M, Mx)),
        D=np.hstack([sys.D, sys.C @ V0]),
        X0=np.zeros_like(sys.X0),
        label=f"{sys.label or 'system'}:transformed",
    )


def u0_energy(aux: AuxiliarySpec, K, T):
    """E int_0^T |u0(t)|_2^2 dt (spectral norm)."""
    if aux.kind == "zero":
        return float(T)
    if aux.kind == "scalar":
        beta = aux.beta(K)
        if abs(beta) < BETA_ZERO:
            return float(T)
        return float(math.expm1(beta * T) / beta)
    if aux.energy is None:
        raise ValueError("custom auxiliary spec needs a supplied u0 energy value")
    return float(aux.energy)


# --- approach 1 --------------------------------------------------------------


@dataclass(eq=False)
class Approach1Result:
    system: StochasticSystem
    aux: AuxiliarySpec
    transformed: StochasticSystem
    gamma_tilde: float
    P: object
    Q: object
    balanced: BalancedRealization
    rom: ReducedModel

    @property
    def sigma_tilde(self):
        return self.balanced.sigma

    @property
    def r(self):
        return self.rom.order


def approach1_reduce(sys, aux, r, gamma_tilde, lmi_opts: LMIOptions | None = None, ridge=False):
    if not gamma_tilde > 0:
        raise ValueError(f"gamma_tilde must be positive, got {gamma_tilde}")
    tsys = build_transformed_system(sys, aux)
    P = solve_lmi_reach(tsys, gamma_tilde, lmi_opts)
    Q = solve_obs_eq(tsys)
    bal = balance(tsys, P, Q, ridge=ridge)
    rom = truncate(bal, r)
    return Approach1Result(sys, aux, tsys, float(gamma_tilde), P, Q, bal, rom)


def _check_nonneg(**values):
    for name, val in values.items():
        if val < 0:
            raise ValueError(f"{name} must be non-negative, got {val}")


def approach1_bound(res: Approach1Result, u_l2norm, v_2norm, u0_energy_value):
    """2 sqrt(gamma~) sum_{k>r} sigma~_k sqrt(|u|^2 + E0 |v|^2)."""
    _check_nonneg(u_l2norm=u_l2norm, v_2norm=v_2norm, u0_energy_value=u0_energy_value)
    tail = float(np.sum(res.rom.sigma_truncated))
    return 2.0 * math.sqrt(res.gamma_tilde) * tail * math.sqrt(
        u_l2norm ** 2 + u0_energy_value * v_2norm ** 2
    )


# --- approach 2 --------------------------------------------------------------


@dataclass(eq=False)
class WTerms:
    W: np.ndarray
    P_r: np.ndarray
    P_hat: np.ndarray
    theta_truncated: np.ndarray

    @property
    def trace(self):
        return float(np.sum(self.theta_truncated * np.diag(self.W))) if self.W.size else 0.0


def _require_stable(sys):
    st = stability_check(sys)
    if not st.stable:
        raise UnstableSystemError(st.spectral_abscissa)


def compute_W(bal_init: BalancedRealization, r_bold):
    """Weight matrix of the a-posteriori bound, with P_r and P_hat.

    P_r solves the reduced type-I equation, P_hat (n x r) the cross equation
    A_b P^ + P^ A11^T + sum k_ij N_ib P^ N_j11^T = -X0b X01^T.
    """
    if bal_init.pair_kind != "initial_state":
        raise ValueError("compute_W needs an initial-state balanced realization")
    b = bal_init.system
    n, r = b.n, int(r_bold)
    if not 1 <= r <= n:
        raise ValueError(f"r_bold must satisfy 1 <= r_bold <= {n}, got {r_bold}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        red = truncate(bal_init, r).system
    _require_stable(red)
    K = b.K
    X01 = b.X0[:r]

    Pr_mat = ops.kron_matrix(red, "Lstar").matrix
    P_r = ops.sym(ops.unvec(sla.solve(Pr_mat, -ops.vec(X01 @ X01.T)), r))

    A11 = b.A[:r, :r]
    N11 = [Ni[:r, :r] for Ni in b.N]
    Hmat = np.kron(np.eye(r), b.A) + np.kron(A11, np.eye(n))
    for i in range(b.q):
        for j in range(b.q):
            if K[i, j] != 0.0:
                Hmat += K[i, j] * np.kron(N11[j], b.N[i])
    try:
        P_hat = ops.unvec(sla.solve(Hmat, -ops.vec(b.X0 @ X01.T)), n, r)
    except sla.LinAlgError as exc:
        raise NumericalError(f"cross Gramian equation is singular: {exc}") from exc

    theta2 = bal_init.sigma[r:].copy()
    if r == n:
        return WTerms(np.zeros((0, 0)), P_r, P_hat, theta2)
    B2 = b.X0[r:]
    A21 = b.A[r:, :r]
    P_hat2 = P_hat[r:]
    W = B2 @ B2.T + 2.0 * P_hat2 @ A21.T
    for i in range(b.q):
        Ni = b.N[i]
        term = 2.0 * Ni[r:, :] @ P_hat - Ni[r:, :r] @ P_r
        for j in range(b.q):
            if K[i, j] != 0.0:
                W = W + K[i, j] * term @ b.N[j][r:, :r].T
    return WTerms(W, P_r, P_hat, theta2)


def initial_state_error_integral(bal_init: BalancedRealization, r_bold):
    """int_0^inf E |C Phi X0 - C1 Phi_r X01|_F^2 dt via the error-system Gramian.

    Independent of :func:`compute_W`: solves the (n + r)-dimensional type-I
    equation of the stacked full/reduced system.
    """
    b = bal_init.system
    n, r = b.n, int(r_bold)
    Z = np.zeros((n, r))
    err = StochasticSystem(
        A=np.block([[b.A, Z], [Z.T, b.A[:r, :r]]]),
        B=np.zeros((n + r, 1)),
        C=np.hstack([b.C, -b.C[:, :r]]),
        D=np.zeros((b.p, 1)),
        N=tuple(np.block([[Ni, Z], [Z.T, Ni[:r, :r]]]) for Ni in b.N),
        M=tuple(np.zeros((n + r, 1)) for _ in b.N),
        X0=np.vstack([b.X0, b.X0[:r]]),
        K=b.K,
    )
    Pe = ops.unvec(
        sla.solve(ops.kron_matrix(err, "Lstar").matrix, -ops.vec(err.X0 @ err.X0.T)), n + r
    )
    return float(np.trace(err.C @ Pe @ err.C.T))


@dataclass(eq=False)
class Approach2Result:
    system: StochasticSystem
    gamma: float
    P: object
    Q: object
    control_balanced: BalancedRealization
    control_rom: ReducedModel
    P_init: object
    Q_init: object
    init_balanced: BalancedRealization
    init_rom: ReducedModel
    w_terms: WTerms

    @property
    def sigma(self):
        return self.control_balanced.sigma

    @property
    def theta(self):
        return self.init_balanced.sigma

    @property
    def W(self):
        return self.w_terms.W

    @property
    def r(self):
        return self.control_rom.order

    @property
    def r_bold(self):
        return self.init_rom.order


def approach2_reduce(sys, r, r_bold, gamma=1.0, lmi_opts: LMIOptions | None = None, ridge=False):
    csys = sys.replace(X0=np.zeros_like(sys.X0))
    P = solve_lmi_reach(csys, gamma, lmi_opts)
    Q = solve_obs_eq(sys)
    cbal = balance(csys, P, Q, ridge=ridge)
    crom = truncate(cbal, r)

    P_init = solve_type1_reach(sys)
    ibal = balance(sys, P_init, Q, ridge=ridge)
    irom = truncate(ibal, r_bold)
    w = compute_W(ibal, r_bold)
    return Approach2Result(sys, float(gamma), P, Q, cbal, crom, P_init, Q, ibal, irom, w)


def approach2_bound(res: Approach2Result, u_l2norm, v_2norm):
    """Control a-priori term plus sqrt(tr(Theta_2 W)) |v|."""
    _check_nonneg(u_l2norm=u_l2norm, v_2norm=v_2norm)
    apriori = 2.0 * math.sqrt(res.gamma) * float(np.sum(res.control_rom.sigma_truncated)) * u_l2norm
    tr = res.w_terms.trace
    scale = max(1.0, float(np.sum(res.theta)) * float(np.max(np.abs(res.W), initial=0.0)))
    if tr < 0:
        if tr < -TRACE_CLAMP * scale:
            raise NumericalError(
                f"tr(Theta_2 W) = {tr:.3g} is materially negative; "
                f"diag(W) = {np.diag(res.W).tolist()}"
            )
        warnings.warn(f"clamping tr(Theta_2 W) = {tr:.3g} to zero", stacklevel=2)
        tr = 0.0
    aposteriori = math.sqrt(tr) * v_2norm
    return {"total": apriori + aposteriori, "apriori_term": apriori, "aposteriori_term": aposteriori,
            "trace_theta2_W": tr}
