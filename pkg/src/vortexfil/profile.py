"""Self-similar collision profiles u and the rescaled field H(t, s) = sqrt(t) u(s/sqrt(t)).

The profile equation

    pair:       i(u - x u') + 2 u'' - 2/Re(u) = 0
    polygonal:  i(u - x u') + 2 u'' + 2 omega u/|u|^2 = 0

is solved through w = v - 1, where v = u - x u', by Picard iteration on an
integrating-factor operator.  u is recovered from w by

    u(x) = 1 + x (alpha + int_x^inf w(z)/z^2 dz).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .core import ModelParams, RadialGrid, alpha_admissible, cumulative_integral
from .errors import ConvergenceError, DomainError, SingularDenominatorError, ValidityError

MODES = ("pair", "polygonal")
SCHEMA_VERSION = 1


def _check_mode(mode):
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")


def _cumint(f, grid: RadialGrid):
    if grid.is_uniform:
        return cumulative_integral(f, grid.h)
    return cumulative_trapezoid(f, grid.nodes, initial=0.0)


def _w_over_x2(w, x):
    # w/z^2 has a finite limit at 0 but is not even-smooth, so extrapolate
    # one-sidedly from the first six positive nodes.
    f = np.empty(x.size, dtype=complex)
    f[1:] = w[1:] / x[1:] ** 2
    if x.size >= 7:
        f[0] = 6 * f[1] - 15 * f[2] + 20 * f[3] - 15 * f[4] + 6 * f[5] - f[6]
    else:
        f[0] = f[1]
    return f


def _tail_integral(w, grid: RadialGrid):
    """T(x) = int_x^{X} w/z^2 + w(X)/X, and the error bar sup|w|/X."""
    x = grid.nodes
    c = _cumint(_w_over_x2(w, x), grid)
    X = grid.X_max
    return c[-1] - c + w[-1] / X, float(np.max(np.abs(w))) / X


def couple_u(w, alpha, grid: RadialGrid):
    """u = 1 + x (alpha + T(x)); u(0) = 1 exactly."""
    w = np.asarray(w, dtype=complex)
    if w.shape != (grid.m,):
        raise DomainError("w must be sampled on the radial grid")
    if w[0] != 0:
        raise DomainError("w(0) must vanish")
    T, _ = _tail_integral(w, grid)
    return 1.0 + grid.nodes * (alpha + T)


def _nonlinear_integrand(u, x, mode, omega):
    if mode == "pair":
        re = u.real
        if np.any(re <= 0):
            j = int(np.argmax(re <= 0))
            raise SingularDenominatorError(f"Re(u) <= 0 at x={x[j]:.6g}")
        return -1.0 / re
    if np.any(np.abs(u) == 0):
        raise SingularDenominatorError("u vanishes on the grid")
    return omega / np.conj(u)


def apply_P(w, params: ModelParams, mode: str, grid: RadialGrid):
    """One application of the Picard operator.

    pair:       e^{ix^2/4} - 1 - e^{ix^2/4} int_0^x y e^{-iy^2/4} / Re(u) dy
    polygonal:  e^{ix^2/4} - 1 + omega e^{ix^2/4} int_0^x y e^{-iy^2/4} / conj(u) dy
    """
    _check_mode(mode)
    x = grid.nodes
    phase = np.exp(0.25j * x**2)
    free = np.expm1(0.25j * x**2)
    if mode == "polygonal" and params.omega == 0:
        return free
    u = couple_u(w, params.alpha, grid)
    g = x * np.conj(phase) * _nonlinear_integrand(u, x, mode, params.omega)
    return free + phase * _cumint(g, grid)


@dataclass(frozen=True)
class EMembership:
    sup_w: float
    sup_ratio: float
    bound: float

    @property
    def member(self) -> bool:
        return self.sup_w + self.sup_ratio <= self.bound

    @classmethod
    def of(cls, w, grid: RadialGrid, alpha):
        x = grid.nodes
        dw = np.gradient(np.asarray(w), x, edge_order=2)
        ratio = np.abs(dw[1:] / x[1:])
        return cls(float(np.max(np.abs(w))), float(np.max(ratio)), float(np.real(alpha)) / 4.0)


@dataclass(frozen=True)
class ProfileSolution:
    mode: str
    alpha: float
    omega: float
    grid: RadialGrid
    w: np.ndarray
    u: np.ndarray
    iterations: int
    final_update: float
    tail_bound: float
    ratios: tuple = ()
    converged: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_mode(self.mode)
        for name in ("w", "u"):
            a = np.array(getattr(self, name), dtype=complex)
            if a.shape != (self.grid.m,):
                raise DomainError(f"{name} must have one sample per radial node")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.w[0] != 0 or self.u[0] != 1:
            raise ValidityError("profile must satisfy w(0) = 0 and u(0) = 1")

    @property
    def x(self):
        return self.grid.nodes

    @property
    def membership(self) -> EMembership:
        return EMembership.of(self.w, self.grid, self.alpha)

    @cached_property
    def du(self):
        """u' from the exact relation u' = alpha + T - w/x (right limit at 0)."""
        T, _ = _tail_integral(self.w, self.grid)
        out = np.empty_like(self.u)
        x = self.x
        out[1:] = self.alpha + T[1:] - self.w[1:] / x[1:]
        out[0] = self.alpha + T[0]
        return out

    @cached_property
    def d2u(self):
        """u'' = -w'/x with w'/x taken from the profile equation."""
        half = 0.5j * (1.0 + self.w)
        if self.mode == "pair":
            return -half + 1.0 / self.u.real
        return -half - self.omega / np.conj(self.u)

    @cached_property
    def _splines(self):
        x = self.x
        return (CubicHermiteSpline(x, self.u, self.du),
                CubicHermiteSpline(x, self.du, self.d2u),
                CubicSpline(x, self.d2u))

    def u_at(self, x, order: int = 2):
        """u and its derivatives up to ``order`` at radial points x >= 0.

        Beyond X_max the asymptotic form 1 + alpha x + w(X_max) is used.
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise DomainError("radial argument must be nonnegative")
        if x.ndim == 0:
            return tuple(v[0] for v in self.u_at(x[None], order))
        inside = x <= self.grid.X_max
        xi = x[inside]
        out = [1.0 + self.alpha * x + self.w[-1],
               np.full(x.shape, self.alpha, dtype=complex),
               np.zeros(x.shape, dtype=complex)][:order + 1]
        for k in range(order + 1):
            if xi.size:
                out[k][inside] = self._splines[k](xi)
        return tuple(out)

    # --- serialization
    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode, "alpha": self.alpha, "omega": self.omega,
            "nodes": self.x.tolist(),
            "w_re": self.w.real.tolist(), "w_im": self.w.imag.tolist(),
            "u_re": self.u.real.tolist(), "u_im": self.u.imag.tolist(),
            "iterations": self.iterations, "final_update": self.final_update,
            "tail_bound": self.tail_bound, "ratios": list(self.ratios),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        grid = RadialGrid(np.asarray(d["nodes"], dtype=float))
        w = np.asarray(d["w_re"]) + 1j * np.asarray(d["w_im"])
        u = np.asarray(d["u_re"]) + 1j * np.asarray(d["u_im"])
        return cls(d["mode"], float(d["alpha"]), float(d.get("omega", 0.0)), grid, w, u,
                   int(d["iterations"]), float(d["final_update"]), float(d["tail_bound"]),
                   tuple(d.get("ratios", ())), bool(d.get("converged", True)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve_profile(params: ModelParams, mode: str = "pair", tol: float = 1e-10,
                  max_iter: int = 100, grid: Optional[RadialGrid] = None,
                  check_membership: bool = True) -> ProfileSolution:
    """Picard iteration w_{k+1} = P(w_k) from w_0 = 0."""
    _check_mode(mode)
    grid = RadialGrid.uniform() if grid is None else grid
    if mode == "polygonal" and not alpha_admissible(params.alpha, mode):
        raise DomainError(f"polygonal profiles need |alpha| <= Re(alpha)^2, got {params.alpha}")
    w = np.zeros(grid.m, dtype=complex)
    updates, ratios = [], []
    for k in range(1, max_iter + 1):
        try:
            w_new = apply_P(w, params, mode, grid)
        except SingularDenominatorError as e:
            last = ratios[-1] if ratios else None
            raise SingularDenominatorError(f"{e} (iteration {k}, last update "
                                           f"{updates[-1] if updates else 0:.3g})", last, k) from e
        d = float(np.max(np.abs(w_new - w)))
        if not np.isfinite(d):
            raise ConvergenceError("Picard iterate became non-finite",
                                   ratios[-1] if ratios else None, k)
        if updates:
            ratios.append(d / updates[-1] if updates[-1] > 0 else 0.0)
        updates.append(d)
        w = w_new
        if d < tol:
            break
        if len(ratios) >= 3 and all(r >= 1 for r in ratios[-3:]):
            raise ConvergenceError(f"no contraction at alpha={params.alpha}: ratio {ratios[-1]:.3g}",
                                   ratios[-1], k)
    else:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (last update {d:.3g})",
                               ratios[-1] if ratios else None, max_iter)
    u = couple_u(w, params.alpha, grid)
    _, tail = _tail_integral(w, grid)
    sol = ProfileSolution(mode, float(params.alpha), float(params.omega), grid, w, u, k, d,
                          tail, tuple(ratios))
    if check_membership:
        mem = sol.membership
        if not mem.member:
            raise ValidityError(f"profile leaves E: {mem.sup_w:.3g} + {mem.sup_ratio:.3g} > {mem.bound:.3g}")
    if any(r >= 1 for r in ratios):
        raise ConvergenceError("contraction ratio >= 1 recorded", max(ratios), k)
    return sol


def fixed_point_defect(sol: ProfileSolution) -> float:
    """sup |P(w*) - w*|."""
    params = ModelParams(alpha=sol.alpha, omega=sol.omega)
    return float(np.max(np.abs(apply_P(sol.w, params, sol.mode, sol.grid) - sol.w)))


# --- residual of the profile equation

FD_HALF_WIDTH = 3


def fd_derivatives(u, h):
    """Sixth-order centred u', u'' on nodes 3 .. m-4."""
    u = np.asarray(u)
    n = u.size

    def S(j):
        return u[3 + j:n - 3 + j]

    d1 = (-S(-3) + 9 * S(-2) - 45 * S(-1) + 45 * S(1) - 9 * S(2) + S(3)) / (60 * h)
    d2 = (2 * S(-3) - 27 * S(-2) + 270 * S(-1) - 490 * S(0) + 270 * S(1)
          - 27 * S(2) + 2 * S(3)) / (180 * h * h)
    return d1, d2


def equation_residual(x, u, du, d2u, mode, omega=0.0):
    """Pointwise residual of the profile equation."""
    if mode == "pair":
        nl = -2.0 / np.real(u)
    else:
        nl = 2.0 * omega * u / np.abs(u) ** 2
    return 1j * (u - x * du) + 2.0 * d2u + nl


def profile_residual(sol: ProfileSolution, pointwise: bool = False):
    """Sup of the equation residual with finite-difference derivatives.

    The three nodes nearest each end are excluded: their stencils would
    reach across the corner at 0 or beyond X_max.
    """
    if not sol.converged:
        raise ConvergenceError("residual requested for a non-converged profile")
    if not sol.grid.is_uniform:
        raise DomainError("residual needs a uniform radial grid")
    du, d2u = fd_derivatives(sol.u, sol.grid.h)
    k = FD_HALF_WIDTH
    r = np.abs(equation_residual(sol.x[k:-k], sol.u[k:-k], du, d2u, sol.mode, sol.omega))
    if pointwise:
        return sol.x[k:-k], r
    return float(np.max(r))


# --- H(t, sigma)

def eval_H(sol: ProfileSolution, t, sigma, order: int = 2):
    """H, dH/dsigma, d2H/dsigma2 at (t, sigma) (only H when order=0).

    At sigma = 0 the first derivative is the right limit u'(0+).
    """
    if np.any(np.asarray(t) <= 0):
        raise DomainError("H is defined for t > 0 only")
    sigma = np.asarray(sigma, dtype=float)
    rt = np.sqrt(t)
    parts = sol.u_at(np.abs(sigma) / rt, order)
    if order == 0:
        return rt * parts[0]
    sgn = np.where(sigma < 0, -1.0, 1.0)
    out = [rt * parts[0], sgn * parts[1]]
    if order >= 2:
        out.append(parts[2] / rt)
    return tuple(out)


def H_flags(sol: ProfileSolution, t, sigma):
    """Masks (corner, asymptotic) for eval_H queries."""
    sigma = np.asarray(sigma, dtype=float)
    return sigma == 0, np.abs(sigma) / np.sqrt(t) > sol.grid.X_max
