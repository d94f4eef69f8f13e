"""Planar point-vortex system  i dz_j/dt + sum_{k != j} G_k (z_j - z_k)/|z_j - z_k|^2 = 0."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import polygon_omega
from .errors import CollisionError, DomainError

COLLISION_EPS = 1e-9


@dataclass(frozen=True)
class PointVortexState:
    t: float
    z: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=complex).ravel()
        G = np.array(self.Gamma, dtype=float).ravel()
        if z.shape != G.shape:
            raise DomainError("one circulation per vortex is required")
        if np.any(G == 0):
            raise DomainError("circulations must be nonzero")
        z.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "Gamma", G)

    @property
    def N(self):
        return self.z.size


@dataclass(frozen=True)
class PVInvariants:
    hamiltonian: float
    momentum: complex
    angular: float

    @classmethod
    def of(cls, state: PointVortexState):
        z, G = state.z, state.Gamma
        j, k = np.triu_indices(z.size, 1)
        H = -float(np.sum(G[j] * G[k] * np.log(np.abs(z[j] - z[k]))))
        return cls(H, complex(np.sum(G * z)), float(np.sum(G * np.abs(z) ** 2)))

    def drift(self, other: "PVInvariants"):
        """Relative change of each invariant (absolute when the reference is ~0)."""
        def rel(a, b):
            return abs(a - b) / max(abs(a), 1.0)
        return {"hamiltonian": rel(self.hamiltonian, other.hamiltonian),
                "momentum": rel(self.momentum, other.momentum),
                "angular": rel(self.angular, other.angular)}


def velocities(z, Gamma, collision_eps=COLLISION_EPS, t=None):
    z = np.asarray(z, dtype=complex)
    d = z[:, None] - z[None, :]
    dist = np.abs(d)
    np.fill_diagonal(dist, np.inf)
    if np.min(dist) < collision_eps:
        j, k = np.unravel_index(np.argmin(dist), dist.shape)
        raise CollisionError(f"vortices {j} and {k} collided", pair=(int(j), int(k)), t=t)
    return 1j * np.sum(np.asarray(Gamma)[None, :] * d / dist**2, axis=1)


def pv_rhs(state: PointVortexState, collision_eps: float = COLLISION_EPS):
    """dz_j/dt = i sum_{k != j} G_k (z_j - z_k)/|z_j - z_k|^2."""
    return velocities(state.z, state.Gamma, collision_eps, state.t)


def integrate_pv(state0: PointVortexState, T: float, dt: float,
                 collision_eps: float = COLLISION_EPS) -> List[PointVortexState]:
    """Fixed-step classical RK4; returns every frame including the initial one."""
    if not dt > 0 or T < dt:
        raise DomainError("need dt > 0 and T >= dt")
    n = int(round(T / dt))
    h = T / n
    G = state0.Gamma
    z = state0.z.copy()
    out = [state0]

    def f(zz, tt):
        return velocities(zz, G, collision_eps, tt)

    for i in range(n):
        t = state0.t + i * h
        k1 = f(z, t)
        k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(z + h * k3, t + h)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(PointVortexState(state0.t + (i + 1) * h, z, G))
    return out


# --- exact configurations

def polygon_state(N: int, Gamma0: Optional[float] = None, radius: float = 1.0,
                  theta: float = 0.0, t: float = 0.0) -> PointVortexState:
    """Unit-circulation regular N-gon, optionally with a centre vortex of strength Gamma0."""
    z = radius * np.exp(1j * (theta + 2 * np.pi * np.arange(N) / N))
    G = np.ones(N)
    if Gamma0 is not None:
        z = np.append(z, 0.0)
        G = np.append(G, Gamma0)
    return PointVortexState(t, z, G)


def polygon_exact(state0: PointVortexState, t, Gamma0: float = 0.0, N: Optional[int] = None):
    """Rigid rotation z_j(t) = e^{i omega t} z_j(0); exact for the unit-radius polygon."""
    N = state0.N - (1 if Gamma0 else 0) if N is None else N
    omega = polygon_omega(N, Gamma0)
    return np.exp(1j * omega * np.asarray(t)[..., None]) * state0.z


def pair_state(d: float = 1.0) -> PointVortexState:
    """Anti-parallel pair at +-d with circulations (1, -1)."""
    return PointVortexState(0.0, np.array([d, -d]), np.array([1.0, -1.0]))


def pair_exact(state0: PointVortexState, t):
    """Uniform translation of an opposite-sign pair with velocity from pv_rhs."""
    v = pv_rhs(state0)
    return state0.z + np.asarray(t)[..., None] * v


def write_csv(traj: List[PointVortexState], path, meta: Optional[dict] = None):
    """Columns t, re_z{j}, im_z{j}; circulations and metadata in comment lines."""
    G = traj[0].Gamma
    with open(path, "w", newline="") as fh:
        fh.write("# Gamma=" + ",".join(repr(float(g)) for g in G) + "\n")
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        wr = csv.writer(fh)
        wr.writerow(["t"] + [c for j in range(G.size) for c in (f"re_z{j}", f"im_z{j}")])
        for s in traj:
            row = [repr(float(s.t))]
            for zj in s.z:
                row += [repr(float(zj.real)), repr(float(zj.imag))]
            wr.writerow(row)


def read_csv(path) -> List[PointVortexState]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    G = np.array([float(g) for g in lines[0].split("=", 1)[1].split(",")])
    rows = [ln for ln in lines if not ln.startswith("#")][1:]
    out = []
    for ln in rows:
        v = np.array([float(c) for c in ln.split(",")])
        out.append(PointVortexState(v[0], v[1::2] + 1j * v[2::2], G))
    return out
