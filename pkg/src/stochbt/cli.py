"""Command-line front end: analyze, reduce, simulate, verify.

Exit codes: 0 success, 2 input or validation problem, 3 numerical or
stability failure, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys as _sys
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .balancing import hsv, write_hsv_csv
from .errors import InputError, NumericalError, ValidationError
from .gramians import (
    PSD_TOL, RESIDUAL_TOL, solve_lmi_reach, solve_obs_eq, solve_type1_reach, verify_gramian,
)
from .simulator import (
    ROUNDOFF_FLOOR, SimConfig, bound_holds, check_energy_estimate, check_ito_lemma, coupled_error,
    mc_l2_norm, simulate, write_summary_csv,
)
from .strategies import (
    AuxiliarySpec, approach1_bound, approach1_reduce, approach2_bound, approach2_reduce, u0_energy,
)
from .system import (
    ControlSignal, HorizonConfig, load_system, stability_check, system_to_dict, validate,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 2, 3, 4
Z_SCORE = 3.0
ITO_SLACK_DT = 10.0

log = logging.getLogger("stochbt")


@dataclass
class RunConfig:
    system: str | None = None
    out: str = "out"
    strategy: str = "approach2"
    r: int | None = None
    r_init: int | None = None
    gamma: float = 1.0
    gamma_tilde: float = 1.0
    aux: str = "zero"
    alpha: float = 0.0
    gammas: tuple = ()
    T: float = 5.0
    dt: float = 1e-3
    n_traj: int = 10_000
    seed: int = 0
    control: dict = field(default_factory=lambda: {"kind": "step", "amplitude": [1.0]})
    v: list | None = None
    tolerances: dict = field(default_factory=dict)
    verbosity: int = 0

    @property
    def horizon(self):
        return HorizonConfig(T=self.T, dt=self.dt)

    def sim_config(self):
        return SimConfig(horizon=self.horizon, n_traj=self.n_traj, master_seed=self.seed)

    def aux_spec(self):
        if self.aux == "zero":
            return AuxiliarySpec.zero()
        return AuxiliarySpec.scalar(self.alpha, self.gammas)

    def tol(self, key, default):
        return float(self.tolerances.get(key, default))

    def tolerance_table(self):
        return {
            "psd": self.tol("psd", PSD_TOL),
            "residual": self.tol("residual", RESIDUAL_TOL),
            "z_score": self.tol("z_score", Z_SCORE),
            "ito_slack_dt": self.tol("ito_slack_dt", ITO_SLACK_DT),
            "roundoff": self.tol("roundoff", ROUNDOFF_FLOOR),
        }


_CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def _parse_gammas(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def build_parser():
    ap = argparse.ArgumentParser(prog="stochbt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"stochbt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("analyze", "stability verdict, Gramian diagnostics and HSV tables"),
        ("reduce", "reduced model(s) and error bound report"),
        ("simulate", "Monte Carlo trajectory summary of the full system"),
        ("verify", "coupled Monte Carlo error versus bound, energy and Ito checks"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--system", help="system JSON file")
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--T", type=float, dest="T")
        p.add_argument("--traj", type=int, dest="n_traj")
        p.add_argument("--strategy", choices=["approach1", "approach2"])
        p.add_argument("--r", type=int)
        p.add_argument("--r-init", type=int, dest="r_init")
        p.add_argument("--gamma", type=float)
        p.add_argument("--gamma-tilde", type=float, dest="gamma_tilde")
        p.add_argument("--aux", choices=["zero", "scalar"])
        p.add_argument("--alpha", type=float)
        p.add_argument("--gammas", type=_parse_gammas)
        p.add_argument("-v", "--verbose", action="count", default=0, dest="verbosity")
    return ap


def load_config(args):
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}") from None
        unknown = set(cfg) - _CONFIG_KEYS
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        if "system" in cfg and not os.path.isabs(cfg["system"]):
            cfg["system"] = str(path.parent / cfg["system"])
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None and not (key == "verbosity" and val == 0):
            cfg[key] = val
    if "gammas" in cfg:
        cfg["gammas"] = tuple(cfg["gammas"])
    try:
        rc = RunConfig(**cfg)
    except TypeError as exc:
        raise InputError(str(exc)) from None
    if rc.system is None:
        raise InputError("no system given (use --system or the config 'system' key)")
    if not Path(rc.system).is_file():
        raise InputError(f"system file not found: {rc.system}")
    if not (0 <= rc.seed < 2 ** 64):
        raise InputError("seed must be an unsigned 64-bit integer")
    return rc


# --- output helpers ------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    _atomic_write(path, json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def _atomic_csv(path, writer, *args):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp, *args)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(rc):
    return {"version": f"stochbt {__version__}", "master_seed": rc.seed,
            "tolerances": rc.tolerance_table()}


# --- shared pipeline steps -----------------------------------------------------


def _load_checked(rc):
    sys = load_system(rc.system)
    bad = validate(sys)
    if bad:
        raise ValidationError(bad)
    return sys


def _signals(rc, sys):
    try:
        u = ControlSignal.from_dict(rc.control)
        ugrid = u.grid(rc.horizon, sys.m)
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad control specification: {exc}") from None
    v = np.ones(sys.d) if rc.v is None else np.asarray(rc.v, dtype=float).reshape(-1)
    if v.shape != (sys.d,):
        raise InputError(f"v has {v.size} entries, expected d={sys.d}")
    return u, ugrid, v


def _orders(rc, sys):
    r = sys.n if rc.r is None else rc.r
    r_init = r if rc.r_init is None else rc.r_init
    for name, val in (("r", r), ("r_init", r_init)):
        if not 1 <= val <= sys.n:
            raise InputError(f"{name} must lie in [1, {sys.n}], got {val}")
    return r, r_init


def _reduce(rc, sys, ugrid, v):
    """Run the configured strategy; return (result, bound report)."""
    r, r_init = _orders(rc, sys)
    u_norm = math.sqrt(mc_l2_norm(ugrid, rc.dt).mean_sq)
    v_norm = float(np.linalg.norm(v))
    params = {"strategy": rc.strategy, "r": r, "T": rc.T, "dt": rc.dt,
              "control": rc.control, "v": v, "u_l2norm": u_norm, "v_2norm": v_norm}
    if rc.strategy == "approach1":
        aux = rc.aux_spec()
        res = approach1_reduce(sys, aux, r, rc.gamma_tilde)
        e0 = u0_energy(aux, sys.K, rc.T)
        total = approach1_bound(res, u_norm, v_norm, e0)
        params.update(gamma_tilde=rc.gamma_tilde, aux=rc.aux, alpha=rc.alpha, gammas=list(rc.gammas))
        tail = float(np.sum(res.rom.sigma_truncated))
        terms = {"sigma_tilde": res.sigma_tilde, "sigma_tilde_tail_sum": tail, "u0_energy": e0,
                 "epsilon": res.P.epsilon}
        if aux.kind == "scalar":
            terms["beta"] = aux.beta(sys.K)
        report = {"terms": terms, "total": total, "parameters": params}
    else:
        res = approach2_reduce(sys, r, r_init, rc.gamma)
        b = approach2_bound(res, u_norm, v_norm)
        params.update(r_init=r_init, gamma=rc.gamma)
        terms = {"sigma": res.sigma, "theta": res.theta,
                 "sigma_tail_sum": float(np.sum(res.control_rom.sigma_truncated)),
                 "apriori_term": b["apriori_term"], "aposteriori_term": b["aposteriori_term"],
                 "trace_theta2_W": b["trace_theta2_W"], "epsilon": res.P.epsilon}
        report = {"terms": terms, "total": b["total"], "parameters": params}
    return res, report


# --- commands ------------------------------------------------------------------


def cmd_analyze(rc: RunConfig):
    sys = _load_checked(rc)
    st = stability_check(sys)
    out = Path(rc.out)
    summary = {"stable": st.stable, "spectral_abscissa": st.spectral_abscissa, "dims": sys.dims}
    if not st.stable:
        write_json(out / "analysis.json", {**summary, **_provenance(rc)})
        raise NumericalError(
            f"system is not mean-square asymptotically stable "
            f"(spectral abscissa {st.spectral_abscissa:.6g})"
        )
    tol = rc.tol("psd", PSD_TOL)
    P = solve_lmi_reach(sys, rc.gamma)
    Q = solve_obs_eq(sys)
    Pi = solve_type1_reach(sys)
    sigma = hsv(P, Q)
    theta = hsv(Pi, Q)
    diag = {
        "reach_lmi": {**verify_gramian(sys, P, tol), "epsilon": P.epsilon,
                      "unconstrained": P.unconstrained, "gamma": P.gamma},
        "reach_type1": verify_gramian(sys, Pi, tol),
        "obs_eq": verify_gramian(sys, Q, tol),
    }
    _atomic_csv(out / "hsv_sigma.csv", write_hsv_csv, sigma, "sigma")
    _atomic_csv(out / "hsv_theta.csv", write_hsv_csv, theta, "theta")
    write_json(out / "analysis.json",
               {**summary, "gramians": diag, "sigma": sigma, "theta": theta, **_provenance(rc)})
    lines = [
        f"system: {sys.label or rc.system}  (n={sys.n}, m={sys.m}, p={sys.p}, q={sys.q}, d={sys.d})",
        f"mean-square stable: yes (spectral abscissa {st.spectral_abscissa:.6g})",
        f"reachability Gramian: epsilon={P.epsilon:.6g}, gamma={P.gamma:g}",
        "sigma: " + ", ".join(f"{s:.6g}" for s in sigma),
        "theta: " + ", ".join(f"{s:.6g}" for s in theta),
    ]
    _atomic_write(out / "summary.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_reduce(rc: RunConfig):
    sys = _load_checked(rc)
    _, ugrid, v = _signals(rc, sys)
    res, report = _reduce(rc, sys, ugrid, v)
    out = Path(rc.out)
    if rc.strategy == "approach1":
        write_json(out / "reduced_system.json", system_to_dict(res.rom.system))
    else:
        write_json(out / "reduced_control.json", system_to_dict(res.control_rom.system))
        write_json(out / "reduced_initial.json", system_to_dict(res.init_rom.system))
    write_json(out / "bound.json", {**report, **_provenance(rc)})
    print(f"{rc.strategy}: bound total {report['total']:.6g}")
    return EXIT_OK


def cmd_simulate(rc: RunConfig):
    sys = _load_checked(rc)
    st = stability_check(sys)
    if not st.stable:
        raise NumericalError(f"system is not mean-square stable (spectral abscissa "
                             f"{st.spectral_abscissa:.6g})")
    u, _, v = _signals(rc, sys)
    res = simulate(sys, u, v, rc.sim_config(), keep_paths=False)
    out = Path(rc.out)
    _atomic_csv(out / "trajectory_summary.csv", write_summary_csv, res)
    write_json(out / "simulation.json", {
        "n_traj": rc.n_traj, "n_flagged": int(res.flagged.sum()), "T": rc.T, "dt": rc.dt,
        "x_final_mean": res.x_final.mean(axis=0), **_provenance(rc),
    })
    print(f"simulated {rc.n_traj} trajectories; summary in {out / 'trajectory_summary.csv'}")
    return EXIT_OK


def cmd_verify(rc: RunConfig):
    sys = _load_checked(rc)
    u, ugrid, v = _signals(rc, sys)
    res, report = _reduce(rc, sys, ugrid, v)
    cfg = rc.sim_config()
    z = rc.tol("z_score", Z_SCORE)
    err = coupled_error(sys, res, u, v, cfg)
    bound = report["total"]
    bound_check = {"rms_error": err.rms, "rms_stderr": err.rms_stderr, "mean_sq": err.mean_sq,
                   "stderr": err.stderr, "n_flagged": err.n_flagged, "bound": bound,
                   "passed": bound_holds(err, bound, z, rc.tol("roundoff", ROUNDOFF_FLOOR))}
    P = res.P if rc.strategy == "approach2" else solve_lmi_reach(sys, rc.gamma)
    energy = check_energy_estimate(sys, P, u, cfg, z=z)
    ito = check_ito_lemma(sys, u, v, cfg, z=z, slack_dt=rc.tol("ito_slack_dt", ITO_SLACK_DT))
    checks = {"bound": bound_check, "energy_estimate": energy, "ito_lemma": ito}
    verdicts = {k: ("PASS" if c["passed"] else "FAIL") for k, c in checks.items()}
    overall = "PASS" if all(x == "PASS" for x in verdicts.values()) else "FAIL"
    write_json(Path(rc.out) / "verdict.json", {
        "verdict": overall, "verdicts": verdicts, "checks": checks, "bound_report": report,
        "sim": {"T": rc.T, "dt": rc.dt, "n_traj": rc.n_traj}, **_provenance(rc),
    })
    for k, val in verdicts.items():
        print(f"{k}: {val}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "reduce": cmd_reduce, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbosity, 2),
                        format="%(levelname)s %(message)s")
    try:
        rc = load_config(args)
        with warnings.catch_warnings():
            if rc.verbosity == 0:
                warnings.simplefilter("ignore")
            return COMMANDS[args.command](rc)
    except InputError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    _sys.exit(main())
