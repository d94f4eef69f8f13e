"""Grids, fields, the cutoff profile, quadrature primitives and the X-norm.

Everything here is a pure function or an immutable value.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, VortexfilError

DEFAULT_GAMMA = 0.125


def _readonly(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# grids and fields

@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid on [-L/2, L/2) with ``n`` nodes."""

    L: float
    n: int

    def __post_init__(self):
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise DomainError(f"n must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise DomainError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def sigma(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @property
    def center(self) -> int:
        """Index of the node sigma = 0."""
        return self.n // 2

    def to_dict(self):
        return {"L": self.L, "n": self.n}


@dataclass(frozen=True)
class ComplexField:
    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values, dtype=complex)
        if v.shape != (self.grid.n,):
            raise DomainError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: SpatialGrid, f):
        return cls(grid, f(grid.sigma))

    def __add__(self, other):
        return ComplexField(self.grid, self.values + _values(other))

    def __sub__(self, other):
        return ComplexField(self.grid, self.values - _values(other))

    def __mul__(self, c):
        return ComplexField(self.grid, self.values * c)

    __rmul__ = __mul__


def _values(f):
    return f.values if isinstance(f, ComplexField) else f


@dataclass(frozen=True)
class RadialGrid:
    """Samples of [0, X_max] starting at 0."""

    nodes: np.ndarray

    def __post_init__(self):
        x = _readonly(self.nodes, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise DomainError("a radial grid needs at least two nodes")
        if x[0] != 0.0:
            raise DomainError("first radial node must be 0")
        if np.any(np.diff(x) <= 0):
            raise DomainError("radial nodes must be strictly increasing")
        object.__setattr__(self, "nodes", x)

    @classmethod
    def uniform(cls, X_max: float = 40.0, m: int = 16001) -> "RadialGrid":
        return cls(np.linspace(0.0, X_max, m))

    @property
    def X_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def m(self) -> int:
        return self.nodes.size

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.nodes)
        return bool(np.allclose(d, d[0], rtol=1e-10, atol=0))

    @property
    def h(self) -> float:
        return float(self.nodes[1] - self.nodes[0])


# ---------------------------------------------------------------------------
# model parameters

@dataclass(frozen=True)
class ModelParams:
    """Physical and construction parameters.

    ``omega`` is derived from ``N`` and ``Gamma0`` when both are given.
    """

    alpha: float = 20.0
    omega: Optional[float] = None
    N: Optional[int] = None
    Gamma0: Optional[float] = None
    rho: float = 1.0
    theta: float = 0.0
    t0: float = 0.5
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not np.isreal(self.alpha) or not self.alpha > 0:
            raise DomainError(f"alpha must be a positive real, got {self.alpha}")
        if not 0 < self.t0 < 1:
            raise DomainError(f"t0 must lie in (0, 1), got {self.t0}")
        if not 0 < self.gamma < 0.25:
            raise DomainError(f"gamma must lie in (0, 1/4), got {self.gamma}")
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if self.N is not None and self.Gamma0 is not None:
            w = polygon_omega(self.N, self.Gamma0)
            if self.omega is None:
                object.__setattr__(self, "omega", w)
            elif not np.isclose(self.omega, w, rtol=0, atol=1e-14):
                raise DomainError(f"omega={self.omega} inconsistent with N={self.N}, Gamma0={self.Gamma0}")
        if self.omega is None:
            object.__setattr__(self, "omega", 0.0)

    def with_(self, **kw) -> "ModelParams":
        d = dict(self.__dict__)
        d.update(kw)
        if "N" in kw or "Gamma0" in kw:
            d["omega"] = None if "omega" not in kw else kw["omega"]
        return ModelParams(**d)


def polygon_omega(N: int, Gamma0: float = 0.0) -> float:
    """Angular velocity (N-1)/2 + Gamma0 of the rotating unit polygon."""
    if N < 1:
        raise DomainError("N must be at least 1")
    return (N - 1) / 2.0 + Gamma0


def alpha_admissible(alpha, mode: str) -> bool:
    """Constraint on a (possibly complex) slope: Re(alpha) > 0, and for the
    polygonal profile additionally |alpha| <= Re(alpha)**2."""
    alpha = complex(alpha)
    if alpha.real <= 0:
        return False
    if mode == "polygonal":
        return abs(alpha) <= alpha.real ** 2
    return True


# ---------------------------------------------------------------------------
# cutoff  phi, psi = tau * phi

def _q(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _q_derivs(x):
    x = np.asarray(x, dtype=float)
    q0 = _q(x)
    q1 = np.zeros_like(x)
    q2 = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    q1[pos] = q0[pos] / xp**2
    q2[pos] = q0[pos] * (1.0 - 2.0 * xp) / xp**4
    return q0, q1, q2


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(np.isnan(tau)):
        raise DomainError("cutoff argument must be nonnegative")
    return tau


def cutoff_phi(tau):
    """Smooth transition from 0 on [0, 1] to 1 on [2, inf)."""
    tau = _check_tau(tau)
    a, b = _q(tau - 1.0), _q(2.0 - tau)
    out = a / (a + b)
    return out if out.ndim else float(out)


def cutoff_psi(tau):
    """psi(tau) = tau * phi(tau)."""
    tau = _check_tau(tau)
    out = tau * cutoff_phi(tau)
    return out if np.ndim(out) else float(out)


def cutoff_phi_derivs(tau):
    """phi, phi', phi'' evaluated analytically."""
    tau = _check_tau(tau)
    A, A1, A2 = _q_derivs(tau - 1.0)
    B, B1, B2 = _q_derivs(2.0 - tau)
    # d/dtau q(2 - tau) = -q'(2 - tau)
    B1 = -B1
    S = A + B
    S1 = A1 + B1
    num1 = A1 * B - A * B1
    phi = A / S
    d1 = num1 / S**2
    d2 = (A2 * B - A * B2) / S**2 - 2.0 * S1 * num1 / S**3
    return phi, d1, d2


def cutoff_psi_derivs(tau):
    """psi, psi', psi''."""
    tau = np.asarray(_check_tau(tau))
    phi, d1, d2 = cutoff_phi_derivs(tau)
    return tau * phi, phi + tau * d1, 2.0 * d1 + tau * d2


def renorm_factor(sigma, alpha):
    """g = 1/(1 + psi(alpha|sigma|)) with its first two sigma-derivatives.

    The derivatives vanish identically on alpha|sigma| <= 1.
    """
    sigma = np.asarray(sigma, dtype=float)
    tau = alpha * np.abs(sigma)
    psi, p1, p2 = cutoff_psi_derivs(tau)
    one = 1.0 + psi
    g = 1.0 / one
    dg = -alpha * np.sign(sigma) * p1 / one**2
    d2g = alpha**2 * (2.0 * p1**2 / one**3 - p2 / one**2)
    return g, dg, d2g


# ---------------------------------------------------------------------------
# quadrature

def trapezoid_complex(f, x=None, dx=None):
    """Composite trapezoid rule for complex (or real) samples."""
    f = np.asarray(f)
    if f.shape[-1] < 2:
        raise DomainError("trapezoid rule needs at least 2 nodes")
    if x is not None:
        return np.trapezoid(f, x=np.asarray(x, dtype=float), axis=-1)
    return np.trapezoid(f, dx=1.0 if dx is None else dx, axis=-1)


def _interval_weights(offsets):
    # weights of int_0^1 p(s) ds for the interpolant through the given offsets
    o = np.asarray(offsets, dtype=float)
    p = np.arange(o.size)
    V = o[None, :] ** p[:, None]
    return np.linalg.solve(V, 1.0 / (p + 1.0))


_W_INTERIOR = _interval_weights(range(-2, 4))
_W_EDGES = {
    0: (range(0, 6), _interval_weights(range(0, 6))),
    1: (range(-1, 5), _interval_weights(range(-1, 5))),
    -2: (range(-3, 3), _interval_weights(range(-3, 3))),
    -1: (range(-4, 2), _interval_weights(range(-4, 2))),
}


def cumulative_integral(f, h: float):
    """Running integral int_{x_0}^{x_i} f on a uniform grid, sixth order.

    Each cell uses the degree-5 interpolant through six neighbouring nodes
    (one-sided near the ends). Falls back to the trapezoid rule for fewer
    than eight nodes.
    """
    f = np.asarray(f)
    n = f.size
    if n < 2:
        raise DomainError("need at least 2 nodes")
    out_dtype = np.result_type(f.dtype, float)
    if n < 8:
        seg = 0.5 * h * (f[1:] + f[:-1])
    else:
        seg = np.empty(n - 1, dtype=out_dtype)
        w = _W_INTERIOR
        seg[2:n - 3] = h * sum(w[j] * f[j:n - 5 + j] for j in range(6))
        for i, (offs, ww) in _W_EDGES.items():
            i = i % (n - 1)
            seg[i] = h * sum(c * f[i + o] for c, o in zip(ww, offs))
    out = np.empty(n, dtype=out_dtype)
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


# ---------------------------------------------------------------------------
# perturbation trajectories and the X-norm

@dataclass(frozen=True)
class XNormReport:
    l2_component: float
    grad_component: float
    local_component: float
    gamma: float
    total: float = field(default=None)

    def __post_init__(self):
        if self.total is None:
            object.__setattr__(self, "total",
                               self.l2_component + self.grad_component + self.local_component)

    def as_dict(self):
        return {"l2": self.l2_component, "grad": self.grad_component,
                "local": self.local_component, "total": self.total, "gamma": self.gamma}


@dataclass(frozen=True)
class PerturbationTrajectory:
    """Frames of r on an increasing set of times in (0, t0]."""

    grid: SpatialGrid
    times: np.ndarray
    frames: np.ndarray
    alpha: float
    gamma: float = DEFAULT_GAMMA
    mode: str = "pair"
    omega: float = 0.0
    report: Optional[XNormReport] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = _readonly(self.times, dtype=float)
        fr = _readonly(self.frames, dtype=complex)
        if fr.ndim != 2 or fr.shape != (t.size, self.grid.n):
            raise DomainError(f"frames shape {fr.shape} does not match times/grid")
        if t.size and np.any(np.diff(t) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "frames", fr)

    def __len__(self):
        return self.times.size

    @property
    def _low_exponent(self):
        cached = self.__dict__.get("_p_low")
        if cached is None:
            if self.times.size < 2:
                cached = 1.0
            else:
                a, b = np.abs(self.frames[0]), np.abs(self.frames[1])
                with np.errstate(divide="ignore", invalid="ignore"):
                    p = np.log(b / a) / np.log(self.times[1] / self.times[0])
                cached = np.clip(np.where(np.isfinite(p), p, 1.0), 1.0, 3.0)
            self.__dict__["_p_low"] = cached
        return cached

    @property
    def t0(self) -> float:
        return float(self.times[-1])

    def scaled(self, c) -> "PerturbationTrajectory":
        return self._with_frames(self.frames * c)

    def __sub__(self, other: "PerturbationTrajectory") -> "PerturbationTrajectory":
        if not np.array_equal(self.times, other.times):
            raise DomainError("trajectories live on different time ladders")
        return self._with_frames(self.frames - other.frames)

    def __add__(self, other: "PerturbationTrajectory") -> "PerturbationTrajectory":
        if not np.array_equal(self.times, other.times):
            raise DomainError("trajectories live on different time ladders")
        return self._with_frames(self.frames + other.frames)

    def _with_frames(self, frames):
        return PerturbationTrajectory(self.grid, self.times, frames, self.alpha, self.gamma,
                                      self.mode, self.omega, None, dict(self.meta))

    def with_frame(self, t: float, values) -> "PerturbationTrajectory":
        times = np.append(self.times, t)
        frames = np.vstack([self.frames, np.asarray(values)[None, :]])
        order = np.argsort(times)
        return PerturbationTrajectory(self.grid, times[order], frames[order], self.alpha,
                                      self.gamma, self.mode, self.omega, None, dict(self.meta))

    def at(self, s):
        """r(s): linear interpolation between stored times.

        Below the first stored time r is continued to r(0) = 0 by a power law
        s**p whose nodewise exponent is read off the first two frames
        (clipped to [1, 3]; p = 1 with a single frame).
        """
        t = self.times
        if s <= 0:
            return np.zeros(self.grid.n, dtype=complex)
        if s >= t[-1]:
            return self.frames[-1].copy()
        j = int(np.searchsorted(t, s))
        if j == 0:
            return self.frames[0] * (s / t[0]) ** self._low_exponent
        lam = (s - t[j - 1]) / (t[j] - t[j - 1])
        return (1.0 - lam) * self.frames[j - 1] + lam * self.frames[j]


def spectral_derivative(values, grid: SpatialGrid, order: int = 1):
    k = grid.k
    return np.fft.ifft((1j * k) ** order * np.fft.fft(values, axis=-1), axis=-1)


def l2_norm(values, grid: SpatialGrid) -> float:
    """Discrete L2 norm (trapezoid rule on the periodic grid)."""
    return float(np.sqrt(grid.h * np.sum(np.abs(values) ** 2, axis=-1)))


def interval_mask(grid: SpatialGrid, alpha: float, width: float = 0.5):
    """Nodes strictly inside (-width/alpha, width/alpha); width=1/2 gives I."""
    return np.abs(grid.sigma) < width / alpha


def x_norm(traj: PerturbationTrajectory, alpha: Optional[float] = None,
           gamma: Optional[float] = None) -> XNormReport:
    """Discrete X-norm of a stored trajectory.

    Each component is sup_j (running max over frames i <= j) / t_j**p.
    """
    alpha = traj.alpha if alpha is None else alpha
    gamma = traj.gamma if gamma is None else gamma
    if not 0 < gamma < 0.25:
        raise DomainError("gamma must lie in (0, 1/4)")
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if len(traj) == 0:
        raise VortexfilError("empty trajectory")
    grid = traj.grid
    inside = interval_mask(grid, alpha)
    l2 = grad = loc = 0.0
    run_l2 = run_grad = run_loc = 0.0
    for t, r in zip(traj.times, traj.frames):
        if t < 0:
            raise DomainError("negative frame time")
        if t == 0:
            if np.any(r != 0):
                raise DomainError("frame at t = 0 must vanish identically")
            continue
        run_l2 = max(run_l2, l2_norm(r, grid))
        run_grad = max(run_grad, l2_norm(spectral_derivative(r, grid), grid))
        run_loc = max(run_loc, float(np.max(np.abs(r[inside]))) if inside.any() else 0.0)
        l2 = max(l2, run_l2 / t**0.75)
        grad = max(grad, run_grad / t**gamma)
        loc = max(loc, 8.0 * run_loc / np.sqrt(t))
    return XNormReport(l2, grad, loc, gamma)
