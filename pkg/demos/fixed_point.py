"""Solve for the perturbation r on a small grid and check it with the inequality suite."""
from vortexfil.core import ModelParams, SpatialGrid
from vortexfil.duhamel import assemble_psi, solve_r
from vortexfil.profile import solve_profile
from vortexfil.verify import (check_denominator_bounds, check_psi_lower_bounds,
                              check_source_bounds)

sol = solve_profile(ModelParams(alpha=20.0), "pair")
grid = SpatialGrid(20.0, 2048)
r = solve_r(sol, ModelParams(alpha=20.0, t0=1e-13), "pair", grid=grid, M=64, J=4)
rep = r.report.as_dict()
print(f"|r|_X = {rep['total']:.4f} (l2 {rep['l2']:.3g}, grad {rep['grad']:.3g}, "
      f"local {rep['local']:.3g}); ratios {r.meta['ratios']}")
checks = check_denominator_bounds(r, sol) + check_source_bounds(r, sol)
checks += check_psi_lower_bounds(r, assemble_psi(r, sol))
for c in checks:
    extra = f" uniformity {c.detail['uniformity']:.3g}" if not c.explicit else ""
    print(f"  {c.status:9s} {c.id:18s} {c.lhs_max:.3g}{extra}")
