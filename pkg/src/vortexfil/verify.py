"""Inequality suite: explicit-constant bounds checked node by node, and
symbolic-constant bounds reported as measured constants."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import (PerturbationTrajectory, SpatialGrid, cutoff_psi, interval_mask, l2_norm)
from .errors import DomainError
from .profile import FD_HALF_WIDTH, ProfileSolution, eval_H, fd_derivatives

TOL_REPORT = 1e-9
UNIFORMITY_LIMIT = 10.0
MAX_LISTED = 10


@dataclass
class BoundCheck:
    id: str
    lhs_max: float
    rhs_min_or_budget: float
    margin: float
    passed: bool
    nodes_checked: int
    explicit: bool = True
    premise_ok: bool = True
    failed_nodes: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        if not self.explicit:
            return "measured"
        if self.passed:
            return "pass"
        return "fail" if self.premise_ok else "premise-violation"

    @property
    def explicit_failure(self) -> bool:
        return self.status == "fail"

    def to_dict(self):
        d = asdict(self)
        d["status"] = self.status
        return d


def _explicit(id, lhs, rhs, tol=TOL_REPORT, premise_ok=True, **detail):
    """Check lhs <= rhs elementwise; margin = min(rhs - lhs)."""
    lhs = np.ravel(np.asarray(lhs, dtype=float))
    rhs = np.ravel(np.broadcast_to(np.asarray(rhs, dtype=float), lhs.shape))
    gap = rhs - lhs
    bad = np.flatnonzero(gap < -tol)
    margin = float(np.min(gap)) if gap.size else np.inf
    return BoundCheck(id, float(np.max(lhs)) if lhs.size else 0.0,
                      float(np.min(rhs)) if rhs.size else np.inf, margin, bad.size == 0,
                      int(lhs.size), True, premise_ok, bad[:MAX_LISTED].tolist(), dict(detail))


def _measured(id, constants, nodes, **detail):
    """Symbolic-C bound: report the largest measured constant and its spread."""
    c = np.asarray(constants, dtype=float)
    pos = c[c > 0]
    spread = float(pos.max() / pos.min()) if pos.size else 1.0
    detail = dict(detail, constants=c.tolist(), uniformity=spread,
                  uniform=spread <= UNIFORMITY_LIMIT)
    C = float(c.max()) if c.size else 0.0
    return BoundCheck(id, C, np.nan, C, True, int(nodes), False, True, [], detail)


# ---------------------------------------------------------------------------
# profile bounds

def check_profile_values(x, u, du, d2u, alpha, tol=TOL_REPORT) -> List[BoundCheck]:
    """The five explicit profile bounds on raw samples.

    x, u are the full node arrays; du, d2u are given on the interior nodes
    x[k:-k] with k = FD_HALF_WIDTH.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=complex)
    ax = alpha * np.abs(x)
    k = FD_HALF_WIDTH
    return [
        _explicit("profile-deviation", np.abs(u - 1 - ax), np.minimum(1.0, np.abs(x)) * alpha / 4, tol),
        _explicit("profile-upper", np.abs(u), 1 + 5 * ax / 4, tol),
        _explicit("profile-lower", 1 + 3 * ax / 4 - u.real, 0.0, tol),
        _explicit("profile-du", np.abs(du), 2 * alpha, tol, offset=k),
        _explicit("profile-d2u", np.abs(d2u), alpha / 4, tol, offset=k),
    ]


def check_profile_bounds(sol: ProfileSolution, tol=TOL_REPORT) -> List[BoundCheck]:
    """Profile bounds at every node; derivatives by sixth-order differences
    on the nodes whose stencil stays away from the corner at 0."""
    if not sol.grid.is_uniform:
        raise DomainError("profile checks need a uniform radial grid")
    du, d2u = fd_derivatives(sol.u, sol.grid.h)
    return check_profile_values(sol.x, sol.u, du, d2u, sol.alpha, tol)


# ---------------------------------------------------------------------------
# H bounds

def check_H_values(s, sigma, H, dH, d2H, alpha, tol=TOL_REPORT) -> List[BoundCheck]:
    """Explicit bounds on H(s, sigma) and its sigma-derivatives (broadcast arrays)."""
    s, sigma = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(sigma, dtype=float))
    rs, a = np.sqrt(s), alpha * np.abs(sigma)
    off = sigma != 0
    return [
        _explicit("H-deviation", np.abs(H - rs - a), alpha / 4 * np.minimum(rs, np.abs(sigma)), tol),
        _explicit("H-lower", 0.5 * (rs + a) - np.real(H), 0.0, tol),
        _explicit("H-dsigma", np.abs(dH)[off], 2 * alpha, tol),
        _explicit("H-d2sigma", np.abs(d2H)[off], alpha / 4 / rs[off], tol),
    ]


def check_H_bounds(sol: ProfileSolution, t_samples, sigma_samples, tol=TOL_REPORT) -> List[BoundCheck]:
    """Bounds on H over the product grid t_samples x sigma_samples."""
    t = np.asarray(t_samples, dtype=float)
    if np.any((t <= 0) | (t >= 1)):
        raise DomainError("t samples must lie in (0, 1)")
    sg = np.asarray(sigma_samples, dtype=float)
    T, S = np.meshgrid(t, sg, indexing="ij")
    H, dH, d2H = eval_H(sol, T.ravel(), S.ravel())
    return check_H_values(T.ravel(), S.ravel(), H, dH, d2H, sol.alpha, tol)


# ---------------------------------------------------------------------------
# denominators along a trajectory

def check_denominator_bounds(traj: PerturbationTrajectory, sol: ProfileSolution,
                             alpha: Optional[float] = None, tol=TOL_REPORT) -> List[BoundCheck]:
    """Lower bounds on Re H/(1+psi) and Re r + Re H/(1+psi) at every stored node.

    The bounds with r rest on sup_I |r(t)| < sqrt(t)/4 and sup |r| < 1/32; a
    failure while that premise is violated is reported as a premise violation.
    """
    alpha = traj.alpha if alpha is None else alpha
    grid = traj.grid
    sigma = grid.sigma
    inside = interval_mask(grid, alpha)
    g = 1.0 / (1.0 + cutoff_psi(alpha * np.abs(sigma)))
    near1, far1, near2, far2 = [], [], [], []
    premise = True
    for t, r in zip(traj.times, traj.frames):
        if t <= 0:
            continue
        D = g * eval_H(sol, t, sigma, order=0).real
        Dr = D + np.real(r)
        bound_in = 0.25 * (np.sqrt(t) + alpha * np.abs(sigma[inside]))
        near1.append(D[inside] - 2 * bound_in)
        far1.append(D[~inside])
        near2.append(Dr[inside] - bound_in)
        far2.append(Dr[~inside])
        if np.max(np.abs(r[inside]), initial=0) >= np.sqrt(t) / 4 or np.max(np.abs(r)) >= 1 / 32:
            premise = False
    cat = np.concatenate
    return [
        _explicit("denom-near", -cat(near1), 0.0, tol),
        _explicit("denom-far", 1 / 3 - cat(far1), 0.0, tol),
        _explicit("denom-near-r", -cat(near2), 0.0, tol, premise_ok=premise),
        _explicit("denom-far-r", 1 / 32 - cat(far2), 0.0, tol, premise_ok=premise),
    ]


def check_psi_lower_bounds(traj: PerturbationTrajectory, psi_frames, alpha=None,
                           tol=TOL_REPORT) -> List[BoundCheck]:
    """Lower bounds on Re Psi_1 of the assembled pair filament."""
    alpha = traj.alpha if alpha is None else alpha
    sigma = traj.grid.sigma
    inside = interval_mask(traj.grid, alpha)
    near, far = [], []
    for t, psi in zip(traj.times, psi_frames):
        near.append(0.25 * (np.sqrt(t) + alpha * np.abs(sigma[inside])) - psi.real[inside])
        far.append(1 / 32 - psi.real[~inside])
    return [_explicit("psi-near", np.concatenate(near), 0.0, tol),
            _explicit("psi-far", np.concatenate(far), 0.0, tol)]


# ---------------------------------------------------------------------------
# sources

def check_source_bounds(traj: PerturbationTrajectory, sol: ProfileSolution,
                        alpha: Optional[float] = None) -> List[BoundCheck]:
    """Source checks on every stored frame of traj.

    b vanishing on alpha|sigma| <= 1 and the r = 0 identities are exact;
    the remaining bounds report C = lhs / shape per frame.
    """
    from .duhamel import SourceContext
    alpha = traj.alpha if alpha is None else alpha
    grid = traj.grid
    ctx = SourceContext(sol, alpha, grid)
    asig = np.abs(grid.sigma)
    inside = ctx.inside
    psi = cutoff_psi(alpha * asig)
    pol = traj.mode == "polygonal"
    near_dom = (1.0 / alpha) > asig
    zero = np.zeros(grid.n, dtype=complex)
    b_supp, b_grad, ident = [], [], []
    C = {k: [] for k in ("a1", "a2", "a-L2", "a-L1-near", "b-L2")}
    for t, r in zip(traj.times, traj.frames):
        if t <= 0:
            continue
        a = ctx.a_tilde(r, t, check=False) if pol else ctx.a(r, t, check=False)
        b = ctx.b(t)
        b_supp.append(np.abs(b[ctx.b_zero]))
        db = np.gradient(b, grid.h)
        b_grad.append(np.abs(db[inside]))
        if pol:
            a0 = ctx.a_tilde(zero, t, check=False)
            ident.append(np.abs(a0 - ctx.H0(t))[inside])
        else:
            a0 = ctx.a(zero, t, check=False)
            ident.append(np.abs(a0 + 1.0)[inside])
        ar, rr = np.abs(a), np.abs(r)
        scale = (np.sqrt(t) + alpha * asig) ** 2
        m_in = inside & (rr > 0)
        if pol:
            c1 = ar[inside] / (1 + rr[inside] / scale[inside])
            shape2 = alpha**2 / (1 + psi) ** 2 + alpha / (1 + psi) + rr
            shapeL2 = alpha**1.5 + alpha**-0.5 * t**-0.25
        else:
            c1 = np.maximum(ar[m_in] - 1, 0) * scale[m_in] / rr[m_in]
            shape2 = alpha / (1 + psi) + rr
            shapeL2 = alpha**0.5 + alpha**-0.5 * t**-0.25
        C["a1"].append(float(np.max(c1, initial=0.0)))
        C["a2"].append(float(np.max(ar[~inside] / shape2[~inside])))
        C["a-L2"].append(l2_norm(a, grid) / shapeL2)
        C["a-L1-near"].append(grid.h * float(np.sum(ar[near_dom])) / alpha**-0.5)
        C["b-L2"].append(l2_norm(b, grid) / alpha**1.5)
    sfx = "-pol" if pol else ""
    n_in = int(np.sum(inside)) * len(b_supp)
    cat = np.concatenate
    checks = [
        _explicit("b-support", cat(b_supp), 0.0, tol=0.0),
        _explicit("b-grad-support", cat(b_grad), 0.0, tol=0.0),
        _explicit("atilde0-identity" if pol else "a0-identity", cat(ident), 0.0),
        _measured("a-near" + sfx, C["a1"], n_in),
        _measured("a-far" + sfx, C["a2"], grid.n * len(b_supp) - n_in),
        _measured("a-L2" + sfx, C["a-L2"], len(b_supp)),
        _measured("a-L1-near", C["a-L1-near"], len(b_supp)),
        _measured("b-L2", C["b-L2"], len(b_supp)),
    ]
    return checks


def source_constant_sweep(profiles: Sequence[ProfileSolution], t_samples,
                          grid: Optional[SpatialGrid] = None, mode: str = "pair"):
    """Measured constants of the r = 0 source bounds across several alpha.

    Returns {check id: {alpha: C}} plus the max/min spread per id.
    """
    table = {}
    for sol in profiles:
        g = grid or SpatialGrid(20.0, 8192)
        t = np.asarray(t_samples, dtype=float)
        traj = PerturbationTrajectory(g, t, np.zeros((t.size, g.n)), sol.alpha, mode=mode,
                                      omega=sol.omega)
        for chk in check_source_bounds(traj, sol):
            if not chk.explicit:
                table.setdefault(chk.id, {})[sol.alpha] = chk.lhs_max
    spread = {}
    for k, v in table.items():
        pos = [c for c in v.values() if c > 0]
        spread[k] = max(pos) / min(pos) if pos else 1.0
    return table, spread


# ---------------------------------------------------------------------------
# point-vortex regressions

def check_pointvortex_artifact(path, tol=1e-8) -> List[BoundCheck]:
    """Closed-form comparison for a stored polygon or pair run."""
    from .pointvortex import pair_exact, polygon_exact, read_csv
    traj = read_csv(path)
    s0 = traj[0]
    t = np.array([s.t for s in traj]) - s0.t
    z = np.array([s.z for s in traj])
    G = s0.Gamma
    if G.size == 2 and G[0] == -G[1]:
        exact, name = pair_exact(s0, t), "pv-pair"
    else:
        ones = np.flatnonzero(G == 1.0)
        N = ones.size
        Gamma0 = float(G[G != 1.0][0]) if N < G.size else 0.0
        exact, name = polygon_exact(s0, t, Gamma0, N), "pv-polygon"
    return [_explicit(name, np.abs(z - exact).ravel(), tol, 0.0)]


# ---------------------------------------------------------------------------
# suite

C_ESTIMATE_NOTE = ("difference estimates for a(r1) - a(r2) are exercised through the "
                   "contraction ratios recorded by the fixed-point solver")


@dataclass
class SuiteReport:
    checks: List[BoundCheck]
    notes: list = field(default_factory=list)

    @property
    def failures(self) -> List[str]:
        return [c.id for c in self.checks if c.explicit_failure]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {"checks": [c.to_dict() for c in self.checks], "failures": self.failures,
                "notes": self.notes}


def _default_samples(sol):
    t = np.geomspace(1e-6, 0.5, 40)
    s = np.concatenate([-np.geomspace(1e-6, 2.0, 125)[::-1], np.geomspace(1e-6, 2.0, 125)])
    return t, np.append(s, 0.0)


def run_suite(config: dict, out_path=None) -> SuiteReport:
    """Run every applicable check on the artifacts named in config.

    Recognised keys: "profile" (ProfileSolution JSON), "trajectory" (fixed-point
    directory), "pointvortex" (list of CSV files).  Writes verify_report.json
    into ``out_path`` (a directory) when given.
    """
    from .duhamel import assemble_psi, load_trajectory
    paths = {k: config.get(k) for k in ("profile", "trajectory", "pointvortex")}
    if not any(paths.values()):
        raise FileNotFoundError("no artifacts to verify")
    for k in ("profile", "trajectory"):
        if paths[k] and not os.path.exists(paths[k]):
            raise FileNotFoundError(f"missing {k} artifact: {paths[k]}")
    for p in paths["pointvortex"] or []:
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing point-vortex artifact: {p}")
    checks, notes = [], []
    sol = ProfileSolution.load(paths["profile"]) if paths["profile"] else None
    if sol is not None:
        checks += check_profile_bounds(sol)
        t, s = _default_samples(sol)
        checks += check_H_bounds(sol, t, s)
    if paths["trajectory"]:
        if sol is None:
            raise FileNotFoundError("a trajectory needs its profile artifact")
        traj = load_trajectory(paths["trajectory"])
        checks += check_denominator_bounds(traj, sol)
        checks += check_source_bounds(traj, sol)
        if traj.mode == "pair":
            checks += check_psi_lower_bounds(traj, assemble_psi(traj, sol))
        notes.append(C_ESTIMATE_NOTE)
    for p in paths["pointvortex"] or []:
        checks += check_pointvortex_artifact(p)
    rep = SuiteReport(checks, notes)
    if out_path is not None:
        with open(os.path.join(out_path, "verify_report.json"), "w") as fh:
            json.dump([c.to_dict() for c in checks], fh, indent=1, default=float)
    return rep
