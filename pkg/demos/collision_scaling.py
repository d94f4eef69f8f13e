"""Minimum separation of the self-similar pair frames, then of an evolved run.

The self-similar frames collide like 2 sqrt(t).  The evolved run starts from
the cut-off ansatz at t = 0.01 and shows how far that time is from the
self-similar regime.
"""
import numpy as np

from vortexfil.core import ModelParams, SpatialGrid
from vortexfil.profile import eval_H, solve_profile
from vortexfil.schrodinger import (EquationKind, collision_scaling_fit, pair_ansatz,
                                   split_step_evolve)

sol = solve_profile(ModelParams(alpha=20.0), "pair")
grid = SpatialGrid(20.0, 8192)

t = np.geomspace(1e-4, 1e-2, 12)
frames = np.array([eval_H(sol, tt, grid.sigma)[0] for tt in t])
print("self-similar frames: slope %.6f, prefactor %.6f" % collision_scaling_fit(t, frames, grid))

run = split_step_evolve(pair_ansatz(sol, grid, 0.01), EquationKind.pair(), 0.01, 0.02, 1e-5, grid,
                        stride=100, floor_eps=1e-9, background=1 - 0.01j)
for tt, d in zip(run.times, run.min_separation()):
    print(f"  t={tt:.4f}  min separation {d:.4f}  2 sqrt(t) = {2 * np.sqrt(tt):.4f}")
print("evolved run: slope %.3f, prefactor %.3g" % collision_scaling_fit(run))
