"""Spectral free propagator and Strang split-step solvers.

Supported equations (all with a spatially constant far field):

    pair        i dPsi + d2 Psi - 1/Re(Psi) = 0
    polygonal   i dPsi + d2 Psi + omega Psi/|Psi|^2 = 0
    bm          i dPhi + d2 Phi + omega Phi (1 - |Phi|^2)/|Phi|^2 = 0
    full_kmd    i dPsi_j + c_j d2 Psi_j + sum_k G_k (Psi_j - Psi_k)/|Psi_j - Psi_k|^2 = 0
"""
from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ComplexField, SpatialGrid, cutoff_psi, spectral_derivative
from .errors import BoxSizeError, CollisionError, DomainError

FLOOR_EPS = 1e-6
EDGE_TOL = 1e-8


@dataclass(frozen=True)
class EquationKind:
    tag: str
    omega: float = 0.0
    Gamma: Optional[tuple] = None
    dispersion: Optional[tuple] = None
    pinned: Optional[tuple] = None

    def __post_init__(self):
        if self.tag not in ("pair", "polygonal", "bm", "full_kmd"):
            raise DomainError(f"unknown equation kind {self.tag!r}")
        if self.tag == "full_kmd":
            if self.Gamma is None or len(self.Gamma) < 1:
                raise DomainError("full_kmd needs circulations")
            G = tuple(float(g) for g in self.Gamma)
            if any(g == 0 for g in G):
                raise DomainError("full_kmd requires all circulations nonzero")
            object.__setattr__(self, "Gamma", G)
            disp = G if self.dispersion is None else tuple(float(c) for c in self.dispersion)
            if len(disp) != len(G):
                raise DomainError("one dispersion coefficient per filament")
            object.__setattr__(self, "dispersion", disp)
            pin = (False,) * len(G) if self.pinned is None else tuple(bool(p) for p in self.pinned)
            object.__setattr__(self, "pinned", pin)

    @classmethod
    def pair(cls):
        return cls("pair")

    @classmethod
    def polygonal(cls, omega):
        return cls("polygonal", float(omega))

    @classmethod
    def bm(cls, omega):
        return cls("bm", float(omega))

    @classmethod
    def full_kmd(cls, Gamma, dispersion=None, pinned=None):
        return cls("full_kmd", 0.0, tuple(Gamma), dispersion, pinned)

    @classmethod
    def kmd2same(cls):
        """The rescaled anti-parallel pair system."""
        return cls.full_kmd((2.0, -2.0), dispersion=(1.0, -1.0))

    @property
    def n_fields(self):
        return len(self.Gamma) if self.tag == "full_kmd" else 1

    def describe(self):
        d = {"tag": self.tag}
        if self.tag in ("polygonal", "bm"):
            d["omega"] = self.omega
        if self.tag == "full_kmd":
            d.update(Gamma=list(self.Gamma), dispersion=list(self.dispersion), pinned=list(self.pinned))
        return d


# ---------------------------------------------------------------------------
# free propagation

def free_propagate(f, t, grid: Optional[SpatialGrid] = None, coeff=1.0):
    """Exact solution of i df/dt + coeff d2f = 0 on the periodic box after time t."""
    if isinstance(f, ComplexField):
        return ComplexField(f.grid, free_propagate(f.values, t, f.grid, coeff))
    if grid is None:
        raise DomainError("a grid is needed for raw arrays")
    f = np.asarray(f, dtype=complex)
    if not np.all(np.isfinite(f)):
        raise DomainError("non-finite input")
    if t == 0:
        return f.copy()
    k2 = grid.k ** 2
    coeff = np.asarray(coeff, dtype=float)
    mult = np.exp(-1j * t * coeff[..., None] * k2) if coeff.ndim else np.exp(-1j * t * coeff * k2)
    return np.fft.ifft(mult * np.fft.fft(f, axis=-1), axis=-1)


def gaussian_free_solution(sigma, t):
    """Closed-form free evolution of exp(-sigma^2)."""
    z = 1.0 + 4j * t
    return np.exp(-np.asarray(sigma) ** 2 / z) / np.sqrt(z)


def dispersion_check(f: ComplexField, t_samples, edge_rel=1e-6) -> float:
    """max_t sqrt(t) |e^{it d2} f|_inf / |f|_L1 over the samples."""
    grid = f.grid
    l1 = grid.h * np.sum(np.abs(f.values))
    if l1 == 0:
        raise DomainError("zero field")
    best = 0.0
    for t in np.atleast_1d(t_samples):
        if t <= 0:
            raise DomainError("times must be positive")
        g = free_propagate(f.values, t, grid)
        peak = np.max(np.abs(g))
        edge = max(abs(g[0]), abs(g[-1]))
        if edge > edge_rel * peak:
            warnings.warn(f"t={t:g} is too large for the box: periodic wrap-around", RuntimeWarning)
        best = max(best, np.sqrt(t) * peak / l1)
    return float(best)


# ---------------------------------------------------------------------------
# nonlinear substeps

def _kmd_velocity(P, kind: EquationKind):
    G = np.asarray(kind.Gamma)
    d = P[:, None, :] - P[None, :, :]
    d2 = np.abs(d) ** 2
    idx = np.arange(P.shape[0])
    d2[idx, idx, :] = np.inf
    v = 1j * np.sum(G[None, :, None] * d / d2, axis=1)
    v[np.asarray(kind.pinned)] = 0.0
    return v


def _kmd_min_distance(P):
    n = P.shape[0]
    if n < 2:
        return np.inf, None
    j, k = np.triu_indices(n, 1)
    dist = np.abs(P[j] - P[k])
    flat = int(np.argmin(dist))
    p, node = np.unravel_index(flat, dist.shape)
    return float(dist[p, node]), (int(j[p]), int(k[p]), int(node))


def check_floor(fields, kind: EquationKind, floor_eps=FLOOR_EPS, t=None, grid=None):
    """Raise CollisionError if a denominator falls below floor_eps."""
    fields = np.asarray(fields)
    where = None
    if kind.tag == "pair":
        q = fields.real
        if np.min(q) < floor_eps:
            where = int(np.argmin(q))
    elif kind.tag in ("polygonal", "bm"):
        q = np.abs(fields)
        if np.min(q) < floor_eps:
            where = int(np.argmin(q))
    else:
        dmin, loc = _kmd_min_distance(fields)
        if dmin < floor_eps:
            where = loc[2]
    if where is not None:
        sigma = None if grid is None else float(np.atleast_1d(grid.sigma)[where])
        raise CollisionError(f"near-collision at t={t}, sigma={sigma}", t=t, sigma=sigma)


def nonlinear_substep(fields, kind: EquationKind, dt, floor_eps=FLOOR_EPS, t=None, grid=None):
    """Pointwise nonlinear flow over dt (closed form, or RK4 for full_kmd)."""
    fields = np.asarray(fields, dtype=complex)
    check_floor(fields, kind, floor_eps, t, grid)
    if kind.tag == "pair":
        return fields - 1j * dt / fields.real
    if kind.tag == "polygonal":
        return fields * np.exp(1j * kind.omega * dt / np.abs(fields) ** 2)
    if kind.tag == "bm":
        m2 = np.abs(fields) ** 2
        return fields * np.exp(1j * kind.omega * dt * (1.0 - m2) / m2)
    k1 = _kmd_velocity(fields, kind)
    k2 = _kmd_velocity(fields + 0.5 * dt * k1, kind)
    k3 = _kmd_velocity(fields + 0.5 * dt * k2, kind)
    k4 = _kmd_velocity(fields + dt * k3, kind)
    return fields + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _dispersion(kind):
    return np.asarray(kind.dispersion, dtype=float) if kind.tag == "full_kmd" else 1.0


def strang_step(fields, kind: EquationKind, dt, grid: SpatialGrid, floor_eps=FLOOR_EPS, t=None):
    """Half nonlinear, full free, half nonlinear."""
    f = nonlinear_substep(fields, kind, 0.5 * dt, floor_eps, t, grid)
    f = free_propagate(f, dt, grid, _dispersion(kind))
    return nonlinear_substep(f, kind, 0.5 * dt, floor_eps, t, grid)


def _background_step(bg, kind, dt):
    # the far field is constant in sigma: only the nonlinear flow acts on it
    b = np.asarray(bg, dtype=complex)
    if kind.tag == "full_kmd":
        return nonlinear_substep(b[:, None], kind, dt, 0.0)[:, 0]
    return nonlinear_substep(b, kind, dt, 0.0)


# ---------------------------------------------------------------------------
# evolution runs

@dataclass
class EvolutionRun:
    kind: EquationKind
    grid: SpatialGrid
    times: np.ndarray
    frames: np.ndarray
    dt: float
    t_start: float
    t_end: float
    background: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.frames = np.asarray(self.frames, dtype=complex)
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("frames must be strictly ordered in t")
        if not np.all(np.isfinite(self.frames)):
            raise DomainError("non-finite frame")

    @property
    def final(self):
        return self.frames[-1]

    def min_separation(self):
        """Per-frame minimum separation between filaments (or from the centre)."""
        F = self.frames
        if self.kind.tag == "pair":
            return np.min(2.0 * F.real, axis=-1)
        if self.kind.tag in ("polygonal", "bm"):
            return np.min(np.abs(F), axis=-1)
        return np.array([_kmd_min_distance(fr)[0] for fr in F])

    def l2_norms(self, background=None):
        """L2 norm of each frame minus the (per-frame) background."""
        out = []
        for i, fr in enumerate(self.frames):
            b = 0.0 if background is None else background[i]
            out.append(float(np.sqrt(self.grid.h * np.sum(np.abs(fr - b) ** 2))))
        return np.array(out)


def _edge_deviation(f, bg):
    f = np.atleast_2d(f)
    b = np.atleast_1d(bg)[:, None]
    return float(np.max(np.abs(f[:, [0, -1]] - b)))


def split_step_evolve(init, kind: EquationKind, t_start: float, t_end: float, dt: float,
                      grid: Optional[SpatialGrid] = None, stride: int = 1,
                      floor_eps: float = FLOOR_EPS, edge_tol: float = EDGE_TOL,
                      background=None) -> EvolutionRun:
    """Strang split-step evolution from t_start to t_end.

    ``background`` is the far-field value (one per filament for full_kmd); it is
    advanced by the same nonlinear flow and the field at the box edges must stay
    within max(edge_tol, 2 * initial edge deviation) of it.
    """
    if isinstance(init, ComplexField):
        grid, init = init.grid, init.values
    if grid is None:
        raise DomainError("a grid is required")
    if not t_end > t_start:
        raise DomainError("t_end must exceed t_start")
    if not dt > 0:
        raise DomainError("dt must be positive")
    f = np.array(init, dtype=complex)
    if kind.tag == "full_kmd" and f.shape != (kind.n_fields, grid.n):
        raise DomainError("full_kmd needs one field per filament")
    if kind.tag != "full_kmd" and f.shape != (grid.n,):
        raise DomainError("field does not match the grid")
    if background is None:
        background = default_background(kind, f)
    bg = np.array(background, dtype=complex)
    edge_budget = max(edge_tol, 2.0 * _edge_deviation(f, bg))
    n_steps = max(1, int(round((t_end - t_start) / dt)))
    h = (t_end - t_start) / n_steps
    times, frames, bgs = [t_start], [f.copy()], [bg.copy()]
    for i in range(n_steps):
        t = t_start + i * h
        f = strang_step(f, kind, h, grid, floor_eps, t)
        bg = _background_step(bg, kind, h)
        dev = _edge_deviation(f, bg)
        if dev > edge_budget:
            raise BoxSizeError(f"field does not decay at the box edge (deviation {dev:.3g} at t={t + h:.6g})")
        if (i + 1) % stride == 0 or i + 1 == n_steps:
            times.append(t_start + (i + 1) * h)
            frames.append(f.copy())
            bgs.append(bg.copy())
    desc = {"kind": kind.describe(), "far_field": [complex(b).__repr__() for b in np.atleast_1d(bgs[-1])],
            "edge_budget": edge_budget}
    run = EvolutionRun(kind, grid, np.array(times), np.array(frames), h, t_start, t_end, desc)
    run.meta["background_frames"] = np.array(bgs)
    return run


def write_frames(directory, times, frames, grid: SpatialGrid, **extra):
    """frames.bin (little-endian float64, interleaved re/im) plus index.json."""
    frames = np.ascontiguousarray(frames, dtype="<c16")
    frames.tofile(os.path.join(directory, "frames.bin"))
    index = {"t": [float(t) for t in times], "shape": list(frames.shape),
             "dtype": "<f8 interleaved (re, im)", "grid": grid.to_dict()}
    index.update(extra)
    with open(os.path.join(directory, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1)


def read_frames(directory):
    """Inverse of write_frames: (times, frames, grid, index)."""
    with open(os.path.join(directory, "index.json")) as fh:
        index = json.load(fh)
    frames = np.fromfile(os.path.join(directory, "frames.bin"), dtype="<c16")
    frames = frames.reshape(index["shape"])
    grid = SpatialGrid(index["grid"]["L"], index["grid"]["n"])
    return np.array(index["t"]), frames, grid, index


def default_background(kind: EquationKind, f):
    """Far-field guess: the average of the two edge values."""
    f = np.atleast_2d(f)
    b = 0.5 * (f[:, 0] + f[:, -1])
    return b if kind.tag == "full_kmd" else b[0]


# ---------------------------------------------------------------------------
# symmetry cross-checks

def polygon_fields(psi1, N, Gamma0=None):
    """Stack e^{2 pi i j/N} psi1 for j < N, plus a zero centre filament."""
    psi1 = np.asarray(psi1, dtype=complex)
    rows = [np.exp(2j * np.pi * j / N) * psi1 for j in range(N)]
    if Gamma0 is not None:
        rows.append(np.zeros_like(psi1))
    return np.array(rows)


def full_kmd_symmetry_check(psi1_init, grid: SpatialGrid, N: int, T: float, dt: float,
                            Gamma0: Optional[float] = None, floor_eps=FLOOR_EPS,
                            edge_tol=EDGE_TOL):
    """Max over t, sigma, j of |Psi_j - e^{2 pi i j/N} Psi_1^reduced|.

    The full system uses unit circulations (and Gamma0 at the centre); the
    reduced equation is the polygonal one with omega = (N-1)/2 + Gamma0.  With
    N = 1 the centre filament is held fixed.
    """
    omega = (N - 1) / 2.0 + (Gamma0 or 0.0)
    G = [1.0] * N + ([Gamma0] if Gamma0 is not None else [])
    pinned = [False] * N + ([N == 1] if Gamma0 is not None else [])
    disp = [1.0] * len(G)
    full_kind = EquationKind.full_kmd(G, dispersion=disp, pinned=pinned)
    init = polygon_fields(psi1_init, N, Gamma0)
    bg_full = polygon_fields(np.array([0.5 * (psi1_init[0] + psi1_init[-1])]), N, Gamma0)[:, 0]
    full = split_step_evolve(init, full_kind, 0.0, T, dt, grid, floor_eps=floor_eps,
                             edge_tol=edge_tol, background=bg_full)
    red = split_step_evolve(psi1_init, EquationKind.polygonal(omega), 0.0, T, dt, grid,
                            floor_eps=floor_eps, edge_tol=edge_tol)
    rot = np.exp(2j * np.pi * np.arange(N) / N)
    dev = 0.0
    for ff, fr in zip(full.frames, red.frames):
        dev = max(dev, float(np.max(np.abs(ff[:N] - rot[:, None] * fr[None, :]))))
        if Gamma0 is not None and N > 1:
            dev = max(dev, float(np.max(np.abs(ff[N]))))
    return dev


def pair_symmetry_check(psi1_init, grid: SpatialGrid, T: float, dt: float,
                        floor_eps=FLOOR_EPS, edge_tol=EDGE_TOL):
    """Max deviation from Psi_2 = -conj(Psi_1) under the rescaled pair system,
    and from the reduced single equation."""
    init = np.array([psi1_init, -np.conj(psi1_init)])
    bg = default_background(EquationKind.kmd2same(), init)
    full = split_step_evolve(init, EquationKind.kmd2same(), 0.0, T, dt, grid,
                             floor_eps=floor_eps, edge_tol=edge_tol, background=bg)
    red = split_step_evolve(psi1_init, EquationKind.pair(), 0.0, T, dt, grid,
                            floor_eps=floor_eps, edge_tol=edge_tol)
    sym = max(float(np.max(np.abs(fr[1] + np.conj(fr[0])))) for fr in full.frames)
    red_dev = max(float(np.max(np.abs(fr[0] - g))) for fr, g in zip(full.frames, red.frames))
    return sym, red_dev


# ---------------------------------------------------------------------------
# energy and scaling diagnostics

def energy_bm(phi, omega: float, grid: Optional[SpatialGrid] = None) -> float:
    """int |dPhi|^2 + omega int (-ln|Phi|^2 + |Phi|^2 - 1), trapezoid on the box."""
    if isinstance(phi, ComplexField):
        grid, phi = phi.grid, phi.values
    phi = np.asarray(phi, dtype=complex)
    m2 = np.abs(phi) ** 2
    if np.any(m2 == 0):
        raise DomainError("energy undefined where Phi vanishes")
    grad = spectral_derivative(phi, grid)
    kinetic = grid.h * np.sum(np.abs(grad) ** 2)
    potential = grid.h * np.sum(-np.log(m2) + m2 - 1.0)
    return float(kinetic + omega * potential)


def collision_scaling_fit(run_or_times, frames=None, grid: Optional[SpatialGrid] = None):
    """Least-squares fit of log(2 Re Psi_1(t, 0)) against log t.

    Returns (slope, prefactor).
    """
    if isinstance(run_or_times, EvolutionRun):
        times, frames, grid = run_or_times.times, run_or_times.frames, run_or_times.grid
    else:
        times = np.asarray(run_or_times, dtype=float)
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[:, 0]
    sep = 2.0 * frames[:, grid.center].real
    keep = times > 0
    if np.any(sep[keep] <= 0):
        raise CollisionError("non-positive separation inside the fit window")
    slope, intercept = np.polyfit(np.log(times[keep]), np.log(sep[keep]), 1)
    return float(slope), float(np.exp(intercept))


def pair_ansatz(sol, grid: SpatialGrid, t: float, alpha: Optional[float] = None):
    """-it + H(t, sigma)/(1 + psi(alpha |sigma|)) on the grid."""
    from .profile import eval_H
    alpha = sol.alpha if alpha is None else alpha
    H, _, _ = eval_H(sol, t, grid.sigma)
    return -1j * t + H / (1.0 + cutoff_psi(alpha * np.abs(grid.sigma)))


def polygon_ansatz(sol, grid: SpatialGrid, t: float, alpha: Optional[float] = None):
    """H(t, sigma)/(1 + psi(alpha |sigma|)): the multiplicative perturbation at r = 0."""
    from .profile import eval_H
    alpha = sol.alpha if alpha is None else alpha
    H, _, _ = eval_H(sol, t, grid.sigma)
    return H / (1.0 + cutoff_psi(alpha * np.abs(grid.sigma)))


def self_similar_residual(sol, sigma, t, dt_fd=None, ds_fd=None):
    """i dH/dt + d2H/dsigma2 - 1/Re(H) by central differences in (t, sigma)."""
    from .profile import eval_H
    sigma = np.asarray(sigma, dtype=float)
    dt_fd = 1e-3 * t if dt_fd is None else dt_fd
    ds_fd = 1e-3 * np.sqrt(t) if ds_fd is None else ds_fd
    Hp = eval_H(sol, t + dt_fd, sigma)[0]
    Hm = eval_H(sol, t - dt_fd, sigma)[0]
    H0 = eval_H(sol, t, sigma)[0]
    Hsp = eval_H(sol, t, sigma + ds_fd)[0]
    Hsm = eval_H(sol, t, sigma - ds_fd)[0]
    dH = (Hp - Hm) / (2 * dt_fd)
    d2 = (Hsp - 2 * H0 + Hsm) / ds_fd**2
    if sol.mode == "pair":
        nl = -1.0 / H0.real
    else:
        nl = sol.omega * H0 / np.abs(H0) ** 2
    return 1j * dH + d2 + nl
