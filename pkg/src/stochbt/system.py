"""Linear SDE systems with controlled drift and diffusion.

The state equation is::

    dx = (A x + B u) dt + sum_i (N_i x + M_i u) dw_i,    x(0) = X0 v
    y  = C x + D u

with ``w`` a q-dimensional Wiener process of covariance ``K t``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CapacityError, ParseError
from .operators import DENSE_NMAX, kron_matrix

#: Spectral abscissa threshold below which a system counts as stable.
STABILITY_THRESHOLD = -1e-10


def _frozen(a, ndim=2):
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape((1,) * ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StochasticSystem:
    """Coefficient bundle ``(A, B, C, D, N, M, X0, K)``.

    Arrays are stored read-only; build modified copies with :meth:`replace`.
    ``N`` and ``M`` are tuples of q matrices each. The deterministic case is
    encoded with q = 1 and ``N[0] = M[0] = 0``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    N: tuple
    M: tuple
    X0: np.ndarray
    K: np.ndarray
    label: str = ""

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "X0", "K"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "N", tuple(_frozen(x) for x in self.N))
        object.__setattr__(self, "M", tuple(_frozen(x) for x in self.M))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return len(self.N)

    @property
    def d(self):
        return self.X0.shape[1]

    @property
    def dims(self):
        return dict(n=self.n, m=self.m, p=self.p, q=self.q, d=self.d)

    def replace(self, **changes):
        return replace(self, **changes)

    def transformed(self, T, Tinv=None):
        """Return the system in the state coordinates ``x_b = T x``."""
        T = np.asarray(T, dtype=float)
        Tinv = np.linalg.inv(T) if Tinv is None else np.asarray(Tinv, dtype=float)
        return self.replace(
            A=T @ self.A @ Tinv,
            B=T @ self.B,
            C=self.C @ Tinv,
            N=tuple(T @ Ni @ Tinv for Ni in self.N),
            M=tuple(T @ Mi for Mi in self.M),
            X0=T @ self.X0,
        )

    @classmethod
    def create(cls, A, B=None, C=None, D=None, N=None, M=None, X0=None, K=None, label=""):
        """Build a system filling omitted blocks with zeros of matching size.

        Omitted ``N``/``M`` give the deterministic encoding (q = 1, zero
        matrices); omitted ``K`` is the identity.
        """
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        B = np.zeros((n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        m = B.shape[1]
        C = np.zeros((1, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        p = C.shape[0]
        D = np.zeros((p, m)) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
        if N is None:
            N = [np.zeros((n, n))] if M is None else [np.zeros((n, n)) for _ in M]
        N = [np.atleast_2d(np.asarray(x, dtype=float)) for x in N]
        q = len(N)
        M = [np.zeros((n, m)) for _ in range(q)] if M is None else M
        M = [np.atleast_2d(np.asarray(x, dtype=float)) for x in M]
        X0 = np.zeros((n, 1)) if X0 is None else np.asarray(X0, dtype=float)
        if X0.ndim < 2:
            X0 = X0.reshape(n, -1)
        K = np.eye(q) if K is None else np.atleast_2d(np.asarray(K, dtype=float))
        return cls(A=A, B=B, C=C, D=D, N=tuple(N), M=tuple(M), X0=X0, K=K, label=label)


@dataclass(frozen=True)
class HorizonConfig:
    """Time grid ``t_k = k dt`` for ``k = 0..steps`` on ``[0, T]``."""

    T: float = 5.0
    dt: float = 1e-3

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0 and self.dt <= self.T * (1 + 1e-12)):
            raise ValueError(f"need 0 < dt <= T, got T={self.T}, dt={self.dt}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ValueError(f"T/dt = {ratio} is not an integer step count")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """Deterministic control ``u(t)``.

    kind is one of ``zero``, ``grid`` (``values`` of shape steps x m),
    ``step`` (``amplitude`` switched on at ``onset``) or ``sine``
    (``amplitude * sin(omega t)``).
    """

    kind: str = "zero"
    values: np.ndarray | None = None
    amplitude: tuple = ()
    onset: float = 0.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "grid", "step", "sine"):
            raise ValueError(f"unknown control kind {self.kind!r}")
        if self.kind == "grid" and self.values is None:
            raise ValueError("grid control needs values")
        object.__setattr__(self, "amplitude", tuple(float(a) for a in np.ravel(self.amplitude)))

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def step(cls, amplitude, onset=0.0):
        return cls("step", amplitude=amplitude, onset=onset)

    @classmethod
    def sine(cls, amplitude, omega=1.0):
        return cls("sine", amplitude=amplitude, omega=omega)

    @classmethod
    def from_grid(cls, values):
        return cls("grid", values=np.atleast_2d(np.asarray(values, dtype=float)))

    def grid(self, horizon: HorizonConfig, m: int):
        """Values at the left endpoints ``t_0 .. t_{steps-1}``, shape (steps, m)."""
        K = horizon.steps
        t = horizon.times[:K]
        if self.kind == "zero":
            return np.zeros((K, m))
        if self.kind == "grid":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.shape != (K, m):
                raise ValueError(f"grid control has shape {vals.shape}, expected {(K, m)}")
            return vals
        amp = np.asarray(self.amplitude, dtype=float)
        if amp.size == 1:
            amp = np.full(m, amp.item())
        if amp.shape != (m,):
            raise ValueError(f"amplitude has {amp.size} entries, expected {m}")
        if self.kind == "step":
            return (t >= self.onset - 1e-12 * max(1.0, abs(self.onset)))[:, None] * amp[None, :]
        return np.sin(self.omega * t)[:, None] * amp[None, :]

    def to_dict(self):
        if self.kind == "grid":
            return {"kind": "grid", "values": np.asarray(self.values).tolist()}
        if self.kind == "step":
            return {"kind": "step", "amplitude": list(self.amplitude), "onset": self.onset}
        if self.kind == "sine":
            return {"kind": "sine", "amplitude": list(self.amplitude), "omega": self.omega}
        return {"kind": "zero"}

    @classmethod
    def from_dict(cls, obj):
        kind = obj.get("kind", "zero")
        if kind == "grid":
            return cls.from_grid(obj["values"])
        if kind == "step":
            return cls.step(obj["amplitude"], obj.get("onset", 0.0))
        if kind == "sine":
            return cls.sine(obj["amplitude"], obj.get("omega", 1.0))
        return cls.zero()


def _shape_violation(name, arr, expected):
    if arr.shape != expected:
        return [f"{name}: dimension mismatch, shape {arr.shape} expected {expected}"]
    return []


def validate(sys: StochasticSystem):
    """Return a list of invariant violations; empty for a valid system."""
    out = []
    n = sys.A.shape[0]
    if sys.A.ndim != 2 or sys.A.shape[0] != sys.A.shape[1]:
        out.append(f"A: dimension mismatch, shape {sys.A.shape} is not square")
    m = sys.B.shape[1] if sys.B.ndim == 2 else 0
    p = sys.C.shape[0] if sys.C.ndim == 2 else 0
    q = len(sys.N)
    d = sys.X0.shape[1] if sys.X0.ndim == 2 else 0
    if min(n, m, p, d) < 1:
        out.append(f"dimensions must be positive, got n={n} m={m} p={p} d={d}")
    if q < 1:
        out.append("q must be at least 1 (encode deterministic systems with N=M=0)")
    out += _shape_violation("B", sys.B, (n, m))
    out += _shape_violation("C", sys.C, (p, n))
    out += _shape_violation("D", sys.D, (p, m))
    out += _shape_violation("X0", sys.X0, (n, d))
    out += _shape_violation("K", sys.K, (q, q))
    if len(sys.M) != q:
        out.append(f"M: dimension mismatch, {len(sys.M)} matrices but q={q}")
    for i, Ni in enumerate(sys.N):
        out += _shape_violation(f"N[{i}]", Ni, (n, n))
    for i, Mi in enumerate(sys.M):
        out += _shape_violation(f"M[{i}]", Mi, (n, m))
    arrays = [sys.A, sys.B, sys.C, sys.D, sys.X0, sys.K, *sys.N, *sys.M]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        out.append("non-finite entries present")
    if sys.K.shape == (q, q) and q >= 1 and np.all(np.isfinite(sys.K)):
        K = sys.K
        scale = max(np.max(np.abs(K)), np.finfo(float).tiny)
        if np.max(np.abs(K - K.T)) > 1e-12 * scale:
            out.append("K not symmetric")
        ev = np.linalg.eigvalsh(0.5 * (K + K.T))
        if ev[0] < -1e-10 * max(1.0, ev[-1]):
            out.append(f"K not PSD (smallest eigenvalue {ev[0]:.6g})")
    return out


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    spectral_abscissa: float


def stability_check(sys: StochasticSystem, n_max: int = DENSE_NMAX):
    """Mean-square asymptotic stability via the spectrum of the n^2 x n^2 operator matrix."""
    if sys.n > n_max:
        raise CapacityError(f"n={sys.n} exceeds dense Kronecker limit n_max={n_max}")
    Lmat = kron_matrix(sys, "Lstar", n_max=n_max).matrix
    abscissa = float(np.max(np.linalg.eigvals(Lmat).real))
    return StabilityReport(abscissa < STABILITY_THRESHOLD, abscissa)


# --- serialization -----------------------------------------------------------

_MATRIX_KEYS = ("A", "B", "C", "D", "X0", "K")
_DIM_KEYS = ("n", "m", "p", "q", "d")


def system_to_dict(sys: StochasticSystem):
    obj = dict(sys.dims)
    for key in _MATRIX_KEYS:
        obj[key] = getattr(sys, key).tolist()
    obj["N"] = [Ni.tolist() for Ni in sys.N]
    obj["M"] = [Mi.tolist() for Mi in sys.M]
    if sys.label:
        obj["label"] = sys.label
    return obj


def _as_matrix(obj, key, ndim=2):
    try:
        arr = np.array(obj[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"entries are not a rectangular array of numbers: {exc}", field=key)
    if arr.ndim != ndim:
        raise ParseError(f"expected a {ndim}-dimensional array, got {arr.ndim}", field=key)
    return arr


def system_from_dict(obj):
    if not isinstance(obj, dict):
        raise ParseError("top level must be a JSON object")
    for key in _DIM_KEYS + _MATRIX_KEYS + ("N", "M"):
        if key not in obj:
            raise ParseError(f"missing required field {key!r}", field=key)
    for key in _DIM_KEYS:
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise ParseError("must be an integer", field=key)
    mats = {key: _as_matrix(obj, key) for key in _MATRIX_KEYS}
    N = _as_matrix(obj, "N", 3) if obj["N"] else np.zeros((0, 0, 0))
    M = _as_matrix(obj, "M", 3) if obj["M"] else np.zeros((0, 0, 0))
    sys = StochasticSystem(N=tuple(N), M=tuple(M), label=str(obj.get("label", "")), **mats)
    declared = {k: obj[k] for k in _DIM_KEYS}
    if declared != sys.dims:
        raise ParseError(f"declared dimensions {declared} disagree with matrices {sys.dims}")
    return sys


def save_system(sys: StochasticSystem, path):
    Path(path).write_text(json.dumps(system_to_dict(sys), indent=1) + "\n")


def load_system(path):
    path = Path(path)
    text = path.read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return system_from_dict(obj)


# --- test/demo systems -------------------------------------------------------


def random_stable_system(rng, n, m=1, p=1, q=1, d=1, noise=0.5, margin=0.2, label=""):
    """Draw a random mean-square stable system.

    A has eigenvalues with real parts at most ``-1``; the noise matrices are
    scaled down until the operator spectral abscissa is below ``-margin``.
    """
    rng = np.random.default_rng(rng)
    G = rng.standard_normal((n, n)) / math.sqrt(n)
    shift = max(np.max(np.linalg.eigvals(G).real), 0.0) + 1.0 + rng.uniform(0.0, 1.0)
    A = G - shift * np.eye(n)
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = rng.standard_normal((p, m)) * 0.1
    X0 = rng.standard_normal((n, d))
    W = rng.standard_normal((q, q))
    K = W @ W.T / q + 0.5 * np.eye(q)
    K = 0.5 * (K + K.T)
    N = [noise * rng.standard_normal((n, n)) / math.sqrt(n) for _ in range(q)]
    M = [noise * rng.standard_normal((n, m)) for _ in range(q)]
    sys = StochasticSystem(A=A, B=B, C=C, D=D, N=tuple(N), M=tuple(M), X0=X0, K=K, label=label)
    for _ in range(60):
        if stability_check(sys).spectral_abscissa < -margin:
            return sys
        sys = sys.replace(N=tuple(0.7 * Ni for Ni in sys.N))
    raise RuntimeError("could not draw a stable system")  # pragma: no cover
