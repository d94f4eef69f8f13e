import json

import numpy as np
import pytest

from vortexfil.core import ModelParams, RadialGrid
from vortexfil.errors import ConvergenceError, DomainError, SingularDenominatorError, ValidityError
from vortexfil.profile import (EMembership, ProfileSolution, H_flags, apply_P, couple_u,
                               equation_residual, eval_H, fixed_point_defect, profile_residual,
                               solve_profile)

GRID = RadialGrid.uniform(40.0, 16001)


# --- coupling formula

def test_couple_u_zero_w():
    u = couple_u(np.zeros(GRID.m), 10.0, GRID)
    assert np.allclose(u, 1 + 10 * GRID.nodes, rtol=0, atol=1e-12)


def test_couple_u_kinked_w_oracle():
    x = GRID.nodes
    u = couple_u(np.minimum(x**2, 1.0), 10.0, GRID)
    j = np.argmin(np.abs(x - 1.0))
    # int_1^inf z^-2 dz = 1, so u(1) = 1 + (10 + 1)
    assert abs(u[j] - 12.0) < 1e-5


def test_couple_u_requires_w0_zero():
    w = np.zeros(GRID.m)
    w[0] = 1e-3
    with pytest.raises(DomainError):
        couple_u(w, 10.0, GRID)


def test_couple_u_pins_origin(rng):
    w = (rng.standard_normal(GRID.m) + 1j * rng.standard_normal(GRID.m)) * 0.1
    w[0] = 0
    assert couple_u(w, 20.0, GRID)[0] == 1.0


# --- the Picard operator

def test_apply_P_polygonal_omega0_is_free():
    x = GRID.nodes
    out = apply_P(np.zeros(GRID.m), ModelParams(alpha=20.0, omega=0.0), "polygonal", GRID)
    assert np.array_equal(out, np.expm1(0.25j * x**2))
    mem = EMembership.of(out, GRID, 20.0)
    assert mem.sup_w == pytest.approx(2.0, abs=1e-6)
    assert mem.sup_ratio == pytest.approx(0.5, rel=2e-3)
    assert mem.member
    assert not EMembership.of(out, GRID, 9.0).member


def test_apply_P_pair_first_iterate_refined_oracle():
    p = ModelParams(alpha=20.0)
    fine = RadialGrid.uniform(40.0, 8 * 16000 + 1)
    coarse = apply_P(np.zeros(GRID.m), p, "pair", GRID)
    ref = apply_P(np.zeros(fine.m), p, "pair", fine)[::8]
    assert np.max(np.abs(coarse - ref)) < 1e-6


def test_apply_P_singular_denominator():
    # a w whose coupled u has Re(u) <= 0 somewhere
    w = -50.0 * np.minimum(GRID.nodes**2, 1.0)
    assert np.any(couple_u(w, 1.0, GRID).real <= 0)
    with pytest.raises(SingularDenominatorError):
        apply_P(w, ModelParams(alpha=1.0), "pair", GRID)


def test_apply_P_unknown_mode():
    with pytest.raises(DomainError):
        apply_P(np.zeros(GRID.m), ModelParams(), "triangle", GRID)


# --- solve_profile

def test_polygonal_omega0_explicit(polygon0_profile):
    sol = polygon0_profile
    assert sol.iterations <= 2
    assert np.array_equal(sol.w, np.expm1(0.25j * GRID.nodes**2))


@pytest.mark.parametrize("name", ["pair_profile", "polygon_profile", "polygon0_profile"])
def test_profile_certificates(name, request):
    sol = request.getfixturevalue(name)
    x = sol.x
    assert sol.converged and sol.u[0] == 1 and sol.w[0] == 0
    assert all(r < 1 for r in sol.ratios)
    assert fixed_point_defect(sol) < 1e-8
    assert profile_residual(sol) < 1e-5
    assert sol.membership.member
    assert np.all(sol.u.real >= 1 + 15 * x / 4 - 1e-10)
    if sol.mode == "pair":
        assert np.all(sol.u.real > 0)
    else:
        assert np.all(np.abs(sol.u) >= 1 - 1e-12)
    X = sol.grid.X_max
    assert abs(sol.u[-1] / X - sol.alpha) <= (1 + sol.alpha / 4) / X
    assert sol.tail_bound == pytest.approx(np.max(np.abs(sol.w)) / X)
    # w'(0) = 0: one-sided difference is O(h)
    assert abs(sol.w[1] - sol.w[0]) / GRID.h < 10 * GRID.h


def test_pair_small_alpha_fails():
    with pytest.raises((ConvergenceError, ValidityError)):
        solve_profile(ModelParams(alpha=0.1), "pair")


def test_polygonal_inadmissible_alpha():
    with pytest.raises(DomainError):
        solve_profile(ModelParams(alpha=0.5, omega=1.0), "polygonal")


def test_max_iter_exhausted():
    with pytest.raises(ConvergenceError) as err:
        solve_profile(ModelParams(alpha=20.0), "pair", tol=1e-300, max_iter=3)
    assert err.value.iterations == 3 and err.value.last_ratio < 1


def test_profile_is_immutable(pair_profile):
    with pytest.raises(ValueError):
        pair_profile.u[3] = 0


def test_profile_roundtrip(pair_profile, tmp_path):
    path = tmp_path / "p.json"
    pair_profile.save(path)
    d = json.loads(path.read_text())
    for key in ("mode", "alpha", "omega", "nodes", "w_re", "w_im", "u_re", "u_im",
                "iterations", "final_update", "tail_bound"):
        assert key in d
    back = ProfileSolution.load(path)
    assert np.array_equal(back.u, pair_profile.u) and np.array_equal(back.w, pair_profile.w)
    assert back.mode == "pair" and back.alpha == 20.0


# --- residual

def test_residual_surrogate_value():
    x, alpha = 1.0, 19.0
    u = 1 + alpha * x
    r = equation_residual(np.array([x]), np.array([u]), np.array([alpha]), np.array([0.0]), "pair")
    assert abs(r[0]) == pytest.approx(np.sqrt(1 + 0.01), rel=1e-12)


def test_residual_refinement_order():
    res = []
    for m in (4001, 8001):
        sol = solve_profile(ModelParams(alpha=20.0), "pair", grid=RadialGrid.uniform(40.0, m))
        res.append(profile_residual(sol))
    assert np.log2(res[0] / res[1]) >= 1.0


def test_polygonal_omega0_residual(polygon0_profile):
    assert profile_residual(polygon0_profile) < 1e-6


def test_residual_pointwise(pair_profile):
    x, r = profile_residual(pair_profile, pointwise=True)
    assert x[0] > 0 and x.size == r.size == GRID.m - 6


# --- H

def test_eval_H_origin(pair_profile):
    H, dH, d2H = eval_H(pair_profile, 1.0, 0.0)
    assert H == 1.0
    for t in (1e-6, 0.01, 0.7):
        assert eval_H(pair_profile, t, 0.0)[0] == pytest.approx(np.sqrt(t), rel=1e-15)


def test_eval_H_deviation_bound(pair_profile):
    t, alpha = 0.25, 20.0
    s = np.linspace(-30, 30, 2001)
    H = eval_H(pair_profile, t, s)[0]
    assert np.all(np.abs(H - np.sqrt(t) - alpha * np.abs(s))
                  <= alpha / 4 * np.minimum(np.sqrt(t), np.abs(s)) + 1e-9)


def test_eval_H_even_and_derivatives(pair_profile):
    t = 0.04
    s = np.linspace(0.01, 3, 50)
    Hp, dp, d2p = eval_H(pair_profile, t, s)
    Hm, dm, d2m = eval_H(pair_profile, t, -s)
    assert np.allclose(Hp, Hm) and np.allclose(dp, -dm) and np.allclose(d2p, d2m)
    h = 1e-5
    fd = (eval_H(pair_profile, t, s + h)[0] - eval_H(pair_profile, t, s - h)[0]) / (2 * h)
    assert np.allclose(fd, dp, atol=1e-5)


def test_eval_H_flags_and_domain(pair_profile):
    corner, asym = H_flags(pair_profile, 0.01, np.array([0.0, 0.1, 10.0]))
    assert corner.tolist() == [True, False, False]
    assert asym.tolist() == [False, False, True]
    with pytest.raises(DomainError):
        eval_H(pair_profile, 0.0, 0.1)
