"""Euler-Maruyama Monte Carlo with common random numbers.

Every trajectory j draws its standard normals from its own generator seeded
with ``(master_seed, j)``, so results do not depend on how trajectories are
batched. Several systems can be advanced on the same Wiener increments;
coupled error estimates compare full and reduced outputs path by path.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .balancing import ReducedModel
from .errors import SimulationError
from .system import ControlSignal, HorizonConfig, StochasticSystem

MAX_FLAGGED_FRACTION = 0.01
ROUNDOFF_FLOOR = 1e-10


@dataclass(frozen=True)
class SimConfig:
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    n_traj: int = 10_000
    master_seed: int = 0
    scheme: str = "euler-maruyama"
    batch_size: int = 10_000
    chunk_steps: int = 250
    work_budget: float = 5e9
    u0_scheme: str = "exact"

    def __post_init__(self):
        if self.u0_scheme not in ("exact", "euler"):
            raise ValueError(f"u0_scheme must be 'exact' or 'euler', got {self.u0_scheme!r}")
        if self.n_traj < 1:
            raise ValueError("n_traj must be at least 1")
        if self.scheme != "euler-maruyama":
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.horizon.steps * self.n_traj > self.work_budget:
            raise ValueError(
                f"steps * n_traj = {self.horizon.steps * self.n_traj:.3g} exceeds the work budget"
            )

    @property
    def dt(self):
        return self.horizon.dt


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte Carlo estimate of E int_0^T |.|^2 dt."""

    mean_sq: float
    stderr: float
    n_traj: int
    n_flagged: int = 0

    @property
    def rms(self):
        return math.sqrt(max(self.mean_sq, 0.0))

    @property
    def rms_stderr(self):
        """Delta-method standard error of ``rms``."""
        return self.stderr / (2.0 * self.rms) if self.rms > 0 else math.sqrt(self.stderr)

    def to_dict(self):
        return {"mean_sq": self.mean_sq, "stderr": self.stderr, "rms": self.rms,
                "rms_stderr": self.rms_stderr, "n_traj": self.n_traj, "n_flagged": self.n_flagged}


def bound_holds(err: ErrorEstimate, bound, z=3.0, floor=ROUNDOFF_FLOOR):
    """rms <= bound + z * stderr, with an absolute floor for full-order round-off."""
    return bool(err.rms <= bound + z * err.rms_stderr + floor)


def _estimate(values, n_flagged=0):
    values = np.asarray(values, dtype=float)
    N = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return ErrorEstimate(mean, se, N, n_flagged)


def noise_factor(K):
    """F with F F^T = K: Cholesky when possible, else a symmetric eigen square root."""
    K = 0.5 * (np.atleast_2d(K) + np.atleast_2d(K).T)
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        lam, V = np.linalg.eigh(K)
        return V * np.sqrt(np.clip(lam, 0.0, None))


def trajectory_generators(master_seed, indices):
    return [np.random.default_rng(np.random.SeedSequence([int(master_seed), int(j)])) for j in indices]


# --- engine ------------------------------------------------------------------


@dataclass(eq=False)
class _Member:
    """One system advanced on the shared noise."""

    sys: StochasticSystem
    x0: np.ndarray
    inputs: object  # callable(k0, L, W_left, dW) -> (L, m) or (batch, L, m)

    def __post_init__(self):
        s = self.sys
        self.G = np.hstack([s.A.T] + [Ni.T for Ni in s.N])
        self.H = np.hstack([s.B.T] + [Mi.T for Mi in s.M])
        self.n = s.n
        self.q = s.q


def _deterministic(grid):
    grid = np.asarray(grid, dtype=float)
    return lambda k0, L, W, dW: grid[k0:k0 + L]


def _zero_input(m):
    return lambda k0, L, W, dW: np.zeros((L, m))


def _stack(members):
    """Block-diagonal layout of all members in one state vector.

    Columns of ``G`` are grouped as [drift | noise 1 | ... | noise q], each
    group spanning all members, so one matmul per step advances everything.
    """
    q = members[0].q
    offs = np.cumsum([0] + [mb.n for mb in members])
    poffs = np.cumsum([0] + [mb.sys.p for mb in members])
    Ntot, Ptot = int(offs[-1]), int(poffs[-1])
    G = np.zeros((Ntot, (q + 1) * Ntot))
    C = np.zeros((Ntot, Ptot))
    for j, mb in enumerate(members):
        o, n = offs[j], mb.n
        for b in range(q + 1):
            G[o:o + n, b * Ntot + o:b * Ntot + o + n] = mb.G[:, b * n:(b + 1) * n]
        C[o:o + n, poffs[j]:poffs[j + 1]] = mb.sys.C.T
    return offs, poffs, G, C


def _scatter(V, mb, o, Ntot, q, out):
    """Add a member's (.., (q+1) n) input term into the stacked column layout."""
    n = mb.n
    for b in range(q + 1):
        out[..., b * Ntot + o:b * Ntot + o + n] += V[..., b * n:(b + 1) * n]


def _run(members, cfg: SimConfig, on_step=None, on_final=None, indices=None):
    """Advance ``members`` on shared increments for the trajectories ``indices``.

    ``on_step(k, xs, ys, us)`` sees states, outputs and inputs at the left
    endpoint t_k for k = 0..steps-1; ``on_final(xs)`` the states at T.
    Returns the boolean mask of flagged (non-finite) trajectories.
    """
    K_steps = cfg.horizon.steps
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    q = members[0].q
    F = noise_factor(members[0].sys.K)
    batch = len(indices)
    gens = trajectory_generators(cfg.master_seed, indices)
    offs, poffs, G, Cbig = _stack(members)
    Ntot = int(offs[-1])
    views = [slice(int(offs[j]), int(offs[j + 1])) for j in range(len(members))]
    pviews = [slice(int(poffs[j]), int(poffs[j + 1])) for j in range(len(members))]
    # internal layout is (state, trajectory): rows stay contiguous per step
    X = np.concatenate(
        [np.broadcast_to(np.asarray(mb.x0, dtype=float)[:, None], (mb.n, batch)) for mb in members])
    GT = np.ascontiguousarray(G.T)
    CT = np.ascontiguousarray(Cbig.T)
    W = np.zeros((batch, q))
    flagged = np.zeros(batch, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for k0 in range(0, K_steps, cfg.chunk_steps):
            L = min(cfg.chunk_steps, K_steps - k0)
            xi = np.stack([g.standard_normal((L, q)) for g in gens])
            dW = (xi @ F.T) * sqdt
            W_left = W[:, None, :] + np.cumsum(dW, axis=1) - dW
            W = W_left[:, -1] + dW[:, -1]
            dWt = np.ascontiguousarray(dW.transpose(1, 2, 0))
            us = [mb.inputs(k0, L, W_left, dW) for mb in members]
            Vdet = np.zeros((L, (q + 1) * Ntot))
            Ydet = np.zeros((L, int(poffs[-1])))
            stoch = []
            for j, (u, mb) in enumerate(zip(us, members)):
                if u.ndim == 2:
                    _scatter(u @ mb.H, mb, offs[j], Ntot, q, Vdet)
                    Ydet[:, pviews[j]] = u @ mb.sys.D.T
                else:
                    stoch.append(j)
            for l in range(L):
                k = k0 + l
                Z = GT @ X
                Z += Vdet[l][:, None]
                u_k = [u[l] if u.ndim == 2 else u[:, l] for u in us]
                if stoch:
                    Zv = Z.T
                    for j in stoch:
                        _scatter(u_k[j] @ members[j].H, members[j], offs[j], Ntot, q, Zv)
                if on_step is not None:
                    Y = (CT @ X).T + Ydet[l]
                    for j in stoch:
                        Y[:, pviews[j]] += u_k[j] @ members[j].sys.D.T
                    on_step(k, [X[v].T for v in views], [Y[:, v] for v in pviews], u_k)
                new = X + Z[:Ntot] * dt
                for i in range(q):
                    new += dWt[l, i] * Z[(i + 1) * Ntot:(i + 2) * Ntot]
                X = new
            bad = ~np.all(np.isfinite(X), axis=0)
            if bad.any():
                flagged |= bad
                X[:, bad] = 0.0
    if on_final is not None:
        on_final([X[v].T for v in views])
    return flagged


def _batches(cfg):
    for start in range(0, cfg.n_traj, cfg.batch_size):
        yield np.arange(start, min(start + cfg.batch_size, cfg.n_traj))


def _check_flagged(n_flagged, n_traj):
    if n_flagged > MAX_FLAGGED_FRACTION * n_traj:
        raise SimulationError(
            f"{n_flagged} of {n_traj} trajectories blew up (more than {MAX_FLAGGED_FRACTION:.0%})"
        )


def _as_control(u):
    if u is None:
        return ControlSignal.zero()
    if isinstance(u, ControlSignal):
        return u
    return ControlSignal.from_grid(u)


def _initial_state(sys, v):
    v = np.zeros(sys.d) if v is None else np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (sys.d,):
        raise ValueError(f"v has {v.size} entries, expected d={sys.d}")
    return sys.X0 @ v, v


# --- public API --------------------------------------------------------------


@dataclass(eq=False)
class SimResult:
    t: np.ndarray
    mean_y: np.ndarray
    var_y: np.ndarray
    x_final: np.ndarray
    y: np.ndarray | None = None
    x: np.ndarray | None = None
    flagged: np.ndarray | None = None


def simulate(sys, u=None, v=None, cfg: SimConfig | None = None, keep_paths=True, keep_states=False):
    """Simulate ``sys`` from x0 = X0 v under control ``u``.

    Outputs are sampled at the left endpoints t_0..t_{steps-1}; ``x`` (when
    kept) includes the final state, shape (n_traj, steps + 1, n).
    """
    cfg = cfg or SimConfig()
    u = _as_control(u)
    ugrid = u.grid(cfg.horizon, sys.m)
    x0, _ = _initial_state(sys, v)
    Ks, N = cfg.horizon.steps, cfg.n_traj
    count = 0
    mean_y = np.zeros((Ks, sys.p))
    m2_y = np.zeros((Ks, sys.p))
    y_all = np.empty((N, Ks, sys.p)) if keep_paths else None
    x_all = np.empty((N, Ks + 1, sys.n)) if keep_states else None
    x_final = np.empty((N, sys.n))
    flagged = np.zeros(N, dtype=bool)
    for idx in _batches(cfg):
        sl = slice(idx[0], idx[-1] + 1)
        ys_b = np.empty((idx.size, Ks, sys.p))

        def on_step(k, xs, ys, us):
            ys_b[:, k] = ys[0]
            if keep_states:
                x_all[sl, k] = xs[0]

        def on_final(xs):
            x_final[sl] = xs[0]
            if keep_states:
                x_all[sl, Ks] = xs[0]

        member = _Member(sys, x0, _deterministic(ugrid))
        flagged[sl] = _run([member], cfg, on_step, on_final, idx)
        ok = ~flagged[sl]
        nb = int(ok.sum())
        if nb:
            # pairwise merge of batch means and centred sums of squares
            mb = ys_b[ok].mean(axis=0)
            m2b = ((ys_b[ok] - mb) ** 2).sum(axis=0)
            delta = mb - mean_y
            tot = count + nb
            mean_y = mean_y + delta * (nb / tot)
            m2_y = m2_y + m2b + delta ** 2 * (count * nb / tot)
            count = tot
        if keep_paths:
            y_all[sl] = ys_b
    nf = int(flagged.sum())
    _check_flagged(nf, N)
    var_y = m2_y / max(count - 1, 1)
    return SimResult(cfg.horizon.times[:Ks], mean_y, var_y, x_final,
                     y_all, x_all, flagged)


def mc_l2_norm(grids, dt):
    """Left-endpoint estimate of E int_0^T |g(t)|^2 dt.

    ``grids`` is (steps, m) for a deterministic signal or (n_traj, steps, m).
    """
    if isinstance(dt, SimConfig):
        dt = dt.dt
    g = np.asarray(grids, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim == 2:
        return ErrorEstimate(float(np.sum(g ** 2) * dt), 0.0, 1)
    per_traj = np.sum(g ** 2, axis=(1, 2)) * dt
    return _estimate(per_traj)


def write_summary_csv(path, result: SimResult):
    p = result.mean_y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"mean_y_{i + 1}" for i in range(p)] + [f"var_y_{i + 1}" for i in range(p)])
        for k, t in enumerate(result.t):
            w.writerow([repr(float(t))] + [repr(float(a)) for a in result.mean_y[k]]
                       + [repr(float(a)) for a in result.var_y[k]])


def write_paths_csv(path, result: SimResult):
    if result.y is None:
        raise ValueError("simulation was run without keep_paths")
    N, Ks, p = result.y.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t"] + [f"y_{i + 1}" for i in range(p)])
        for j in range(N):
            for k in range(Ks):
                w.writerow([j, repr(float(result.t[k]))] + [repr(float(a)) for a in result.y[j, k]])


# --- coupled error estimates --------------------------------------------------


def _u0_provider(aux, sys, ugrid, v, horizon, scheme="exact"):
    """Extended input [u; u0(t) v] of the transformed system.

    For the scalar kind, ``exact`` evaluates the closed-form exponential on
    the accumulated Wiener path; ``euler`` runs the Euler-Maruyama recursion
    of the auxiliary system itself, which makes the discrete full and
    transformed models agree exactly at full order.
    """
    t_all = horizon.times[:horizon.steps]
    dt = horizon.dt
    m = sys.m
    v = np.asarray(v, dtype=float)

    def extended(L, batch, u0v, k0):
        out = np.empty((batch, L, m + u0v.shape[-1]))
        out[:, :, :m] = ugrid[k0:k0 + L][None]
        out[:, :, m:] = u0v
        return out

    if aux.kind == "zero":
        ext = np.hstack([ugrid, np.broadcast_to(v, (ugrid.shape[0], v.size))])
        return _deterministic(ext)
    if aux.kind == "scalar":
        g = aux.gamma_vector(sys.q)
        drift = -aux.alpha - 0.5 * float(g @ sys.K @ g)
        state = {}

        def provider(k0, L, W_left, dW):
            if scheme == "exact":
                phi = np.exp(drift * t_all[k0:k0 + L][None, :] + W_left @ g)
            else:
                if k0 == 0:
                    state["phi"] = np.ones(W_left.shape[0])
                factors = 1.0 - aux.alpha * dt + dW @ g
                run = np.cumprod(factors, axis=1)
                phi = state["phi"][:, None] * np.concatenate(
                    [np.ones((run.shape[0], 1)), run[:, :-1]], axis=1)
                state["phi"] = state["phi"] * run[:, -1]
            return extended(L, W_left.shape[0], phi[:, :, None] * v[None, None, :], k0)

        return provider

    def provider(k0, L, W_left, dW):
        u0 = np.asarray(aux.u0_path(t_all[k0:k0 + L], W_left), dtype=float)
        return extended(L, W_left.shape[0], u0 @ v, k0)

    return provider


def _approximation_members(sys, result, ugrid, v, horizon, scheme="exact"):
    """Members whose summed outputs approximate y for one reduction result."""
    from .strategies import Approach1Result, Approach2Result

    if isinstance(result, ReducedModel):
        rs = result.system
        if result.kind == "control":
            return [_Member(rs, np.zeros(rs.n), _deterministic(ugrid))]
        return [_Member(rs, rs.X0 @ v, _zero_input(rs.m))]
    if isinstance(result, Approach1Result):
        rs = result.rom.system
        return [_Member(rs, np.zeros(rs.n), _u0_provider(result.aux, sys, ugrid, v, horizon, scheme))]
    if isinstance(result, Approach2Result):
        cs = result.control_rom.system
        ins = result.init_rom.system
        return [
            _Member(cs, np.zeros(cs.n), _deterministic(ugrid)),
            _Member(ins, ins.X0 @ v, _zero_input(ins.m)),
        ]
    if isinstance(result, StochasticSystem):
        return [_Member(result, result.X0 @ v, _deterministic(ugrid))]
    raise TypeError(f"cannot simulate a {type(result).__name__}")


def coupled_errors(sys, results, u=None, v=None, cfg: SimConfig | None = None):
    """Estimates of |y - y_hat|_{L^2_T} for several approximations on shared noise.

    ``results`` may hold ReducedModel, Approach1Result, Approach2Result or a
    plain StochasticSystem (simulated from its own X0 v with input u).
    """
    cfg = cfg or SimConfig()
    u = _as_control(u)
    ugrid = u.grid(cfg.horizon, sys.m)
    x0, v = _initial_state(sys, v)
    groups = [_approximation_members(sys, r, ugrid, v, cfg.horizon, cfg.u0_scheme) for r in results]
    members = [_Member(sys, x0, _deterministic(ugrid))]
    spans = []
    for g in groups:
        spans.append((len(members), len(members) + len(g)))
        members.extend(g)
    dt = cfg.dt
    per_traj = np.zeros((len(results), cfg.n_traj))
    flagged = np.zeros(cfg.n_traj, dtype=bool)
    for idx in _batches(cfg):
        acc = np.zeros((len(results), idx.size))

        def on_step(k, xs, ys, us):
            for a, (lo, hi) in enumerate(spans):
                err = ys[0] - ys[lo]
                for b in range(lo + 1, hi):
                    err = err - ys[b]
                acc[a] += np.einsum("ij,ij->i", err, err) * dt

        flagged[idx] = _run(members, cfg, on_step, None, idx)
        per_traj[:, idx] = acc
    nf = int(flagged.sum())
    _check_flagged(nf, cfg.n_traj)
    ok = ~flagged
    return [_estimate(per_traj[a, ok], nf) for a in range(len(results))]


def coupled_error(sys, result, u=None, v=None, cfg: SimConfig | None = None):
    return coupled_errors(sys, [result], u, v, cfg)[0]


# --- statistical checks --------------------------------------------------------


def check_energy_estimate(sys, P_report, u=None, cfg: SimConfig | None = None, z=3.0):
    """Compare sup_t E<x(t), p_k>^2 with lambda_k gamma |u|^2 for x0 = 0."""
    cfg = cfg or SimConfig()
    if P_report.role != "reach_lmi":
        raise ValueError("energy estimate needs a reach_lmi Gramian")
    u = _as_control(u)
    ugrid = u.grid(cfg.horizon, sys.m)
    lam, Pv = np.linalg.eigh(P_report.G)
    Ks = cfg.horizon.steps
    s1 = np.zeros((Ks + 1, sys.n))
    s2 = np.zeros((Ks + 1, sys.n))
    flagged = np.zeros(cfg.n_traj, dtype=bool)
    for idx in _batches(cfg):
        def on_step(k, xs, ys, us):
            c = (xs[0] @ Pv) ** 2
            s1[k] += c.sum(axis=0)
            s2[k] += (c ** 2).sum(axis=0)

        def on_final(xs):
            c = (xs[0] @ Pv) ** 2
            s1[Ks] += c.sum(axis=0)
            s2[Ks] += (c ** 2).sum(axis=0)

        flagged[idx] = _run([_Member(sys, np.zeros(sys.n), _deterministic(ugrid))],
                            cfg, on_step, on_final, idx)
    nf = int(flagged.sum())
    _check_flagged(nf, cfg.n_traj)
    N = cfg.n_traj
    mean = s1 / N
    var = np.clip(s2 / N - mean ** 2, 0.0, None) * N / max(N - 1, 1)
    u_sq = mc_l2_norm(ugrid, cfg.dt).mean_sq
    rows = []
    for k in range(sys.n):
        at = int(np.argmax(mean[:, k]))
        est = float(mean[at, k])
        se = float(math.sqrt(var[at, k] / N))
        bound = float(lam[k] * P_report.gamma * u_sq)
        rows.append({"eigenvalue": float(lam[k]), "estimate": est, "stderr": se, "bound": bound,
                     "margin": bound - est, "t_sup": float(at * cfg.dt),
                     "passed": bool(est <= bound + z * se)})
    return {"u_l2_sq": u_sq, "directions": rows, "passed": all(r["passed"] for r in rows)}


def check_ito_lemma(sys, u=None, v=None, cfg: SimConfig | None = None, z=3.0, slack_dt=10.0):
    """Integrated form of d/dt E[x^T x] = 2E[x^T a] + sum_ij k_ij E[b_i^T b_j].

    Drift a = A x + B u and diffusion columns b_i = N_i x + M_i u; both sides
    are estimated on the same trajectories.
    """
    cfg = cfg or SimConfig()
    u = _as_control(u)
    ugrid = u.grid(cfg.horizon, sys.m)
    x0, _ = _initial_state(sys, v)
    dt = cfg.dt
    Kmat = sys.K
    lhs = np.zeros(cfg.n_traj)
    rhs = np.zeros(cfg.n_traj)
    flagged = np.zeros(cfg.n_traj, dtype=bool)
    for idx in _batches(cfg):
        acc = np.zeros(idx.size)
        fin = np.zeros(idx.size)

        def on_step(k, xs, ys, us):
            x, uk = xs[0], us[0]
            a = x @ sys.A.T + uk @ sys.B.T
            b = [x @ Ni.T + uk @ Mi.T for Ni, Mi in zip(sys.N, sys.M)]
            val = 2.0 * np.einsum("ij,ij->i", x, a)
            for i in range(sys.q):
                for j in range(sys.q):
                    if Kmat[i, j] != 0.0:
                        val += Kmat[i, j] * np.einsum("ij,ij->i", b[i], b[j])
            acc[:] += val * dt

        def on_final(xs):
            fin[:] = np.einsum("ij,ij->i", xs[0], xs[0])

        flagged[idx] = _run([_Member(sys, x0, _deterministic(ugrid))], cfg, on_step, on_final, idx)
        lhs[idx] = fin - float(x0 @ x0)
        rhs[idx] = acc
    nf = int(flagged.sum())
    _check_flagged(nf, cfg.n_traj)
    ok = ~flagged
    d = _estimate(lhs[ok] - rhs[ok], nf)
    tol = z * d.stderr + slack_dt * dt
    return {
        "lhs": float(np.mean(lhs[ok])), "rhs": float(np.mean(rhs[ok])),
        "discrepancy": d.mean_sq, "stderr": d.stderr, "tolerance": tol,
        "passed": bool(abs(d.mean_sq) <= tol),
    }


def noise_covariance(cfg: SimConfig, K):
    """Sample covariance of dW/sqrt(dt) over all steps and trajectories, with stderrs."""
    K = np.atleast_2d(K)
    q = K.shape[0]
    F = noise_factor(K)
    Ks = cfg.horizon.steps
    s1 = np.zeros((q, q))
    s2 = np.zeros((q, q))
    count = 0
    for idx in _batches(cfg):
        gens = trajectory_generators(cfg.master_seed, idx)
        for k0 in range(0, Ks, cfg.chunk_steps):
            L = min(cfg.chunk_steps, Ks - k0)
            z = np.stack([g.standard_normal((L, q)) for g in gens]).reshape(-1, q) @ F.T
            prod = z[:, :, None] * z[:, None, :]
            s1 += prod.sum(axis=0)
            s2 += (prod ** 2).sum(axis=0)
            count += z.shape[0]
    mean = s1 / count
    se = np.sqrt(np.clip(s2 / count - mean ** 2, 0.0, None) / count)
    return mean, se
