"""Command-line front end: one subcommand per pipeline stage.

Every run directory receives the exact configuration that produced it
(config.json) and is locked for the lifetime of the process.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import fcntl
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ModelParams, RadialGrid, SpatialGrid
from .errors import (BallViolationError, BoxSizeError, CollisionError, ConvergenceError,
                     DomainError, ValidityError, VortexfilError)

CONFIG_SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    # model
    alpha: float = 20.0
    omega: Optional[float] = None
    N: Optional[int] = None
    Gamma0: Optional[float] = None
    rho: float = 1.0
    theta: float = 0.0
    t0: Optional[float] = None
    gamma: float = 0.125
    mode: str = "pair"
    # grids
    L: float = 20.0
    n: int = 8192
    X_max: float = 40.0
    m: int = 16001
    # time stepping
    kind: str = "pair"
    scenario: str = "constant"
    dt: float = 1e-3
    t_start: float = 0.0
    t_end: float = 1.0
    stride: int = 10
    floor_eps: float = 1e-6
    edge_tol: float = 1e-8
    # fixed points
    M: int = 256
    J: int = 8
    profile_tol: float = 1e-10
    profile_max_iter: int = 100
    tol: float = 1e-12
    max_iter: int = 30
    bisect_steps: int = 8
    probes: int = 0
    # point vortices
    pv_config: str = "polygon"
    # artifacts
    profile: Optional[str] = None
    trajectory: Optional[str] = None
    pointvortex: list = field(default_factory=list)
    sweep: Optional[str] = None
    out: str = "run"
    seed: int = 0
    schema_version: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise DomainError(f"unsupported config schema {self.schema_version}")
        if self.mode not in ("pair", "polygonal"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.kind not in ("pair", "polygonal", "bm", "full_kmd"):
            raise DomainError(f"unknown kind {self.kind!r}")
        if self.n < 8 or self.n % 2 or self.L <= 0:
            raise DomainError("grid needs L > 0 and an even n >= 8")
        if self.m < 8 or self.X_max <= 0:
            raise DomainError("radial grid needs X_max > 0 and m >= 8")
        if self.dt <= 0 or self.stride < 1 or self.M < 2 or self.J < 1:
            raise DomainError("dt, stride, M and J must be positive")
        self.params()

    def params(self, **kw) -> ModelParams:
        d = dict(alpha=self.alpha, omega=self.omega, N=self.N, Gamma0=self.Gamma0,
                 rho=self.rho, theta=self.theta, gamma=self.gamma)
        if self.t0 is not None:
            d["t0"] = self.t0
        d.update(kw)
        return ModelParams(**d)

    def grid(self) -> SpatialGrid:
        return SpatialGrid(self.L, self.n)

    def radial(self) -> RadialGrid:
        return RadialGrid.uniform(self.X_max, self.m)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# plumbing

@contextmanager
def locked_dir(path):
    """Create ``path`` and hold an exclusive lock on it until exit."""
    os.makedirs(path, exist_ok=True)
    fh = open(os.path.join(path, ".lock"), "w")
    try:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise VortexfilError(f"output directory {path} is in use by another process")
        yield path
    finally:
        fcntl.flock(fh, fcntl.LOCK_UN)
        fh.close()


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _log(msg):
    print(msg, flush=True)


def _load_profile(cfg: RunConfig):
    from .profile import ProfileSolution
    if not cfg.profile:
        raise FileNotFoundError("this command needs --profile")
    if not os.path.exists(cfg.profile):
        raise FileNotFoundError(f"profile file not found: {cfg.profile}")
    return ProfileSolution.load(cfg.profile)


# ---------------------------------------------------------------------------
# commands

def cmd_profile(cfg: RunConfig):
    from .profile import fixed_point_defect, profile_residual, solve_profile
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        try:
            sol = solve_profile(cfg.params(), cfg.mode, cfg.profile_tol, cfg.profile_max_iter,
                                cfg.radial())
        except ConvergenceError as e:
            _log(f"profile: no convergence: {e} (last ratio {e.last_ratio}, "
                 f"iterations {e.iterations})")
            return 2
        sol.save(os.path.join(out, "profile.json"))
        rows = [(k + 2, r) for k, r in enumerate(sol.ratios)]
        _write_csv(os.path.join(out, "convergence.csv"), ["iteration", "ratio"], rows)
        _log(f"profile: {sol.mode} alpha={sol.alpha} omega={sol.omega} iterations={sol.iterations} "
             f"defect={fixed_point_defect(sol):.3g} residual={profile_residual(sol):.3g} "
             f"u(0)={sol.u[0]}")
    return 0


def cmd_pv(cfg: RunConfig):
    from .pointvortex import (PVInvariants, integrate_pv, pair_state, polygon_state,
                              write_csv)
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        if cfg.pv_config == "pair":
            s0 = pair_state(cfg.rho)
        elif cfg.pv_config in ("polygon", "polygon-center"):
            N = cfg.N or 3
            G0 = cfg.Gamma0 if cfg.pv_config == "polygon-center" else None
            s0 = polygon_state(N, G0, cfg.rho, cfg.theta)
        else:
            raise DomainError(f"unknown point-vortex configuration {cfg.pv_config!r}")
        try:
            traj = integrate_pv(s0, cfg.t_end - cfg.t_start, cfg.dt)
        except CollisionError as e:
            _log(f"pv: collision of {e.pair} at t={e.t}")
            return 3
        write_csv(traj, os.path.join(out, "pv.csv"), {"config": cfg.pv_config})
        inv0 = PVInvariants.of(traj[0])
        drift = PVInvariants.of(traj[-1]).drift(inv0)
        with open(os.path.join(out, "invariants.json"), "w") as fh:
            json.dump(drift, fh, indent=1)
        _log(f"pv: {len(traj)} frames, invariant drift {max(drift.values()):.3g}")
    return 0


def _initial_fields(cfg: RunConfig, grid: SpatialGrid):
    """(kind, init, background, t_start) for a simulate scenario."""
    from .schrodinger import EquationKind, pair_ansatz, polygon_ansatz, polygon_fields
    s = grid.sigma
    bump = np.exp(-s**2)
    params = cfg.params()
    sc = cfg.scenario
    if cfg.kind == "pair":
        kind = EquationKind.pair()
        if sc == "constant":
            return kind, np.ones(grid.n, dtype=complex), 1.0 - 1j * cfg.t_start, cfg.t_start
        if sc == "ansatz":
            sol = _load_profile(cfg)
            return (kind, pair_ansatz(sol, grid, cfg.t_start), 1.0 - 1j * cfg.t_start,
                    cfg.t_start)
        if sc == "bump":
            return kind, 1.0 + 0.1 * bump, 1.0, cfg.t_start
    if cfg.kind == "polygonal":
        kind = EquationKind.polygonal(params.omega)
        if sc == "ansatz":
            sol = _load_profile(cfg)
            return kind, polygon_ansatz(sol, grid, cfg.t_start), 1.0, cfg.t_start
        if sc == "bump":
            return kind, 1.0 + 0.01 * bump, 1.0, cfg.t_start
    if cfg.kind == "bm" and sc in ("small-energy", "bump"):
        return EquationKind.bm(params.omega), 1.0 + 0.01 * bump, 1.0, cfg.t_start
    if cfg.kind == "full_kmd" and sc in ("symmetric", "bump"):
        N = cfg.N or 3
        G = [1.0] * N + ([cfg.Gamma0] if cfg.Gamma0 is not None else [])
        pinned = [False] * N + ([N == 1] if cfg.Gamma0 is not None else [])
        kind = EquationKind.full_kmd(G, pinned=pinned)
        init = polygon_fields(1.0 + 0.01 * bump, N, cfg.Gamma0)
        bg = polygon_fields(np.array([1.0 + 0j]), N, cfg.Gamma0)[:, 0]
        return kind, init, bg, cfg.t_start
    raise DomainError(f"scenario {sc!r} is not available for kind {cfg.kind!r}")


def cmd_simulate(cfg: RunConfig):
    from .schrodinger import (collision_scaling_fit, energy_bm, full_kmd_symmetry_check,
                              split_step_evolve, write_frames)
    grid = cfg.grid()
    kind, init, bg, t0 = _initial_fields(cfg, grid)
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        summary = {"kind": kind.describe(), "scenario": cfg.scenario}
        try:
            run = split_step_evolve(init, kind, t0, cfg.t_end, cfg.dt, grid, cfg.stride,
                                    cfg.floor_eps, cfg.edge_tol, bg)
        except CollisionError as e:
            summary["abort"] = {"reason": "near-collision", "t": e.t, "sigma": e.sigma}
            _write_json(os.path.join(out, "summary.json"), summary)
            _log(f"simulate: near-collision at t={e.t}, sigma={e.sigma}")
            return 3
        except BoxSizeError as e:
            summary["abort"] = {"reason": "box-size", "message": str(e)}
            _write_json(os.path.join(out, "summary.json"), summary)
            _log(f"simulate: {e}")
            return 4
        write_frames(out, run.times, run.frames, grid, kind=kind.tag)
        bgs = run.meta["background_frames"]
        minsep = run.min_separation()
        l2 = run.l2_norms(bgs if np.ndim(bgs) == 1 else bgs[:, :, None])
        header = ["t", "min_separation", "l2_norm", "energy"]
        energy = [""] * len(run.times)
        if kind.tag == "bm":
            energy = [energy_bm(f, kind.omega, grid) for f in run.frames]
        rows = [[repr(float(t)), repr(float(m)), repr(float(n)), e if e == "" else repr(float(e))]
                for t, m, n, e in zip(run.times, minsep, l2, energy)]
        if kind.tag in ("polygonal", "bm"):
            header.append("min_abs")
            for r, f in zip(rows, run.frames):
                r.append(repr(float(np.min(np.abs(f)))))
        _write_csv(os.path.join(out, "summary.csv"), header, rows)
        _write_csv(os.path.join(out, "plot_min_separation.csv"), ["t", "min_separation"],
                   [(repr(float(t)), repr(float(m))) for t, m in zip(run.times, minsep)])
        snaps = np.unique(np.linspace(0, len(run.times) - 1, 5).astype(int))
        first = run.frames if run.frames.ndim == 2 else run.frames[:, 0]
        _write_csv(os.path.join(out, "plot_snapshots.csv"),
                   ["sigma"] + [f"re_psi_t={run.times[j]:.6g}" for j in snaps],
                   [[repr(float(s))] + [repr(float(first[j, i].real)) for j in snaps]
                    for i, s in enumerate(grid.sigma)])
        if kind.tag == "pair" and cfg.scenario == "ansatz":
            slope, pref = collision_scaling_fit(run)
            summary.update(scaling_slope=slope, scaling_prefactor=pref)
        if kind.tag == "full_kmd" and cfg.scenario == "symmetric":
            summary["symmetry_deviation"] = full_kmd_symmetry_check(
                init[0], grid, cfg.N or 3, cfg.t_end - t0, cfg.dt, cfg.Gamma0, cfg.floor_eps,
                cfg.edge_tol)
        summary["min_separation"] = float(np.min(minsep))
        _write_json(os.path.join(out, "summary.json"), summary)
        _log("simulate: " + json.dumps({k: v for k, v in summary.items() if k != "kind"}))
    return 0


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, default=float)


def cmd_fixedpoint(cfg: RunConfig):
    from .core import x_norm
    from .duhamel import (assemble_psi, bisect_t0, contraction_probe, fixedpoint_report,
                          save_trajectory, solve_r)
    sol = _load_profile(cfg)
    params = cfg.params(omega=sol.omega, alpha=sol.alpha)
    grid = cfg.grid()
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        try:
            t0 = cfg.t0
            if t0 is None:
                t0 = bisect_t0(sol, params, sol.mode, steps=cfg.bisect_steps, grid=grid,
                               M=cfg.M, J=cfg.J)
                _log(f"fixedpoint: bisected t0 = {t0:.6g}")
            traj = solve_r(sol, params.with_(t0=t0), sol.mode, cfg.tol, cfg.max_iter, grid,
                           cfg.M, cfg.J)
        except (ConvergenceError, ValidityError, BallViolationError) as e:
            _log(f"fixedpoint: {type(e).__name__}: {e}")
            return 2
        save_trajectory(traj, out)
        report = fixedpoint_report(traj)
        if cfg.probes:
            rng = np.random.default_rng(cfg.seed)
            ratios = []
            for _ in range(cfg.probes):
                noise = rng.standard_normal(traj.frames.shape) + 1j * rng.standard_normal(traj.frames.shape)
                pert = traj._with_frames(traj.frames + noise * np.sqrt(traj.times)[:, None] * 1e-3)
                ratios.append(contraction_probe(traj, pert, sol, params, sol.mode, cfg.M))
            report["probe_ratios"] = ratios
        if sol.mode == "pair":
            psi = assemble_psi(traj, sol)
            edge = np.abs(psi[:, [0, -1]] - (1.0 - 1j * traj.times)[:, None])
            report["far_field_deviation"] = float(np.max(edge))
        _write_json(os.path.join(out, "fixedpoint_report.json"), report)
        comps = x_norm(traj).as_dict()
        _log("fixedpoint: t0={:.6g} |r|_X={:.6g} (l2 {:.3g}, grad {:.3g}, local {:.3g}) "
             "ratios={}".format(t0, comps["total"], comps["l2"], comps["grad"], comps["local"],
                                ["%.3g" % r for r in report["ratios"]]))
    return 0


def _parse_sweep(spec):
    name, _, vals = spec.partition("=")
    if name != "alpha" or not vals:
        raise DomainError("sweep must look like alpha=10,20,40")
    return [float(v) for v in vals.split(",")]


def cmd_verify(cfg: RunConfig):
    from .verify import run_suite, source_constant_sweep
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        if cfg.sweep:
            from .profile import solve_profile
            sols = [solve_profile(cfg.params(alpha=a), cfg.mode, cfg.profile_tol,
                                  cfg.profile_max_iter, cfg.radial())
                    for a in _parse_sweep(cfg.sweep)]
            table, spread = source_constant_sweep(sols, np.geomspace(1e-8, 1e-4, 5), cfg.grid(),
                                                  cfg.mode)
            alphas = [s.alpha for s in sols]
            rows = [[k] + [repr(table[k][a]) for a in alphas] + [repr(spread[k])] for k in table]
            _write_csv(os.path.join(out, "uniformity_table.csv"),
                       ["check"] + [f"alpha={a:g}" for a in alphas] + ["max_over_min"], rows)
            for r in rows:
                _log("verify sweep: " + " ".join(r))
            if not (cfg.profile or cfg.trajectory or cfg.pointvortex):
                return 0
        report = run_suite({"profile": cfg.profile, "trajectory": cfg.trajectory,
                            "pointvortex": cfg.pointvortex}, out)
        for c in report.checks:
            _log(f"verify: {c.status:18s} {c.id:22s} margin={c.margin:.3g}")
        for n in report.notes:
            _log("verify: note: " + n)
        if report.failures:
            _log("verify: FAILED " + ",".join(report.failures))
            return 1
    return 0


def cmd_sweep(cfg: RunConfig):
    """Profile solves across alpha: iterations, last ratio, defect and residual."""
    from .profile import fixed_point_defect, profile_residual, solve_profile
    with locked_dir(cfg.out) as out:
        cfg.save(os.path.join(out, "config.json"))
        rows = []
        for a in _parse_sweep(cfg.sweep or "alpha=10,20,40"):
            t = time.perf_counter()
            try:
                sol = solve_profile(cfg.params(alpha=a), cfg.mode, cfg.profile_tol,
                                    cfg.profile_max_iter, cfg.radial())
                rows.append([a, sol.iterations, max(sol.ratios, default=0.0),
                             fixed_point_defect(sol), profile_residual(sol), "ok"])
            except (ConvergenceError, ValidityError) as e:
                rows.append([a, getattr(e, "iterations", ""), getattr(e, "last_ratio", ""),
                             "", "", type(e).__name__])
            _log(f"sweep: alpha={a:g} {rows[-1][-1]} ({time.perf_counter() - t:.2f} s)")
        _write_csv(os.path.join(out, "sweep.csv"),
                   ["alpha", "iterations", "max_ratio", "defect", "residual", "status"], rows)
    return 0


COMMANDS = {"profile": cmd_profile, "pv": cmd_pv, "simulate": cmd_simulate,
            "fixedpoint": cmd_fixedpoint, "verify": cmd_verify, "sweep": cmd_sweep}

# command-line flag -> RunConfig field
_FLAGS = {
    "alpha": float, "omega": float, "N": int, "Gamma0": float, "rho": float, "theta": float,
    "t0": float, "gamma": float, "mode": str, "L": float, "n": int, "X_max": float, "m": int,
    "kind": str, "scenario": str, "dt": float, "t_start": float, "t_end": float,
    "stride": int, "floor_eps": float, "edge_tol": float, "M": int, "J": int,
    "profile_tol": float, "tol": float, "max_iter": int, "bisect_steps": int, "probes": int,
    "pv_config": str, "profile": str, "trajectory": str, "sweep": str,
}


def build_parser():
    p = argparse.ArgumentParser(prog="vortexfil", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON RunConfig; flags override its fields")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        for flag, typ in _FLAGS.items():
            sp.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
        sp.add_argument("--pv", dest="pointvortex", action="append",
                        help="point-vortex CSV artifact (repeatable)")
    return p


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    for key in list(_FLAGS) + ["out", "seed", "pointvortex"]:
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    return RunConfig.from_dict(base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg)
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"vortexfil: I/O error: {e}", file=sys.stderr)
        return 5
    except VortexfilError as e:
        print(f"vortexfil: {type(e).__name__}: {e}", file=sys.stderr)
        return 6


if __name__ == "__main__":
    sys.exit(main())
