"""Build the pair and polygonal profiles at alpha = 20 and run the explicit bounds on them."""
import numpy as np

from vortexfil.core import ModelParams
from vortexfil.profile import fixed_point_defect, profile_residual, solve_profile
from vortexfil.verify import check_H_bounds, check_profile_bounds

for mode, omega in (("pair", None), ("polygonal", 0.0), ("polygonal", 1.0)):
    sol = solve_profile(ModelParams(alpha=20.0, omega=omega), mode)
    print(f"{mode} omega={sol.omega}: {sol.iterations} iterations, "
          f"defect {fixed_point_defect(sol):.2e}, residual {profile_residual(sol):.2e}")
    checks = check_profile_bounds(sol)
    checks += check_H_bounds(sol, np.geomspace(1e-6, 0.5, 20), np.linspace(-5, 5, 101))
    for c in checks:
        print(f"  {c.status:5s} {c.id:16s} margin {c.margin:.3g} over {c.nodes_checked} nodes")
