import numpy as np
import pytest

from vortexfil.core import (ComplexField, ModelParams, PerturbationTrajectory, SpatialGrid,
                            interval_mask, x_norm)
from vortexfil.duhamel import (SourceContext, apply_duhamel, contraction_probe, graded_mesh,
                               ladder, load_trajectory, save_trajectory, solve_r, source_a,
                               source_a_tilde, source_b)
from vortexfil.errors import (BallViolationError, DomainError, QuadratureError)
from vortexfil.profile import eval_H

GRID = SpatialGrid(20.0, 2048)
ALPHA = 20.0
T0 = 1e-13


# --- sources

def test_a_at_zero_is_minus_one_on_I(pair_profile):
    inside = interval_mask(GRID, ALPHA)
    for t in (1e-8, 1e-3, 0.1):
        a = source_a(np.zeros(GRID.n), t, pair_profile, ALPHA, GRID).values.values
        assert np.array_equal(a[inside], np.full(inside.sum(), -1.0 + 0j))


def test_a_tilde_at_zero_is_H_on_I(polygon_profile):
    inside = interval_mask(GRID, ALPHA)
    t = 1e-3
    at = source_a_tilde(np.zeros(GRID.n), t, polygon_profile, ALPHA, GRID).values.values
    H = eval_H(polygon_profile, t, GRID.sigma)[0]
    assert np.allclose(at[inside], H[inside], rtol=0, atol=1e-15)


def test_b_support_and_zero_region(pair_profile):
    b = source_b(1e-3, pair_profile, ALPHA, GRID).values.values
    assert np.all(b[ALPHA * np.abs(GRID.sigma) <= 1] == 0)
    assert np.any(b != 0)
    with pytest.raises(DomainError):
        source_b(0.0, pair_profile, ALPHA, GRID)


def test_b_hand_expansion_linear_cutoff_region(pair_profile):
    t = 1e-3
    s = GRID.sigma
    sel = ALPHA * np.abs(s) >= 2
    b = source_b(t, pair_profile, ALPHA, GRID).values.values
    H, dH, _ = eval_H(pair_profile, t, s)
    den = 1 + ALPHA * np.abs(s)
    dg = -ALPHA * np.sign(s) / den**2
    d2g = 2 * ALPHA**2 / den**3
    ref = -2 * dH * dg - H * d2g
    assert np.max(np.abs(b[sel] - ref[sel])) < 1e-12 * max(1, np.max(np.abs(ref[sel])))


def test_ball_violation_detected(pair_profile):
    ctx = SourceContext(pair_profile, ALPHA, GRID)
    r = np.zeros(GRID.n, dtype=complex)
    r[GRID.center] = -1.0
    with pytest.raises(BallViolationError):
        ctx.a(r, 1e-4)


def test_sources_need_grid_for_arrays(pair_profile):
    with pytest.raises(DomainError):
        source_a(np.zeros(GRID.n), 1e-3, pair_profile, ALPHA)
    F = ComplexField(GRID, np.zeros(GRID.n, dtype=complex))
    assert source_a(F, 1e-3, pair_profile, ALPHA).kind == "a_pair"


# --- Duhamel quadrature

def test_graded_mesh():
    s, w = graded_mesh(2.0, 8)
    assert s[0] == 0 and s[-1] == 2.0 and np.all(np.diff(s) > 0)
    assert w.sum() == pytest.approx(2.0)
    assert np.allclose(np.diff(s), 2.0 * (2 * np.arange(8) + 1) / 64)


def test_duhamel_zero_and_constant():
    z = apply_duhamel(lambda s: np.zeros(GRID.n), 0.3, GRID)
    assert np.array_equal(z.values, np.zeros(GRID.n))
    c = apply_duhamel(lambda s: np.ones(GRID.n), 0.3, GRID)
    assert np.max(np.abs(c.values + 0.3j)) < 1e-13
    assert np.array_equal(apply_duhamel(lambda s: 1.0, 0.0, GRID).values, np.zeros(GRID.n))


def test_duhamel_linear_source_exact():
    # a source linear in s is integrated exactly against each Fourier phase
    k = GRID.k[5]
    mode = np.exp(1j * k * GRID.sigma)
    t = 0.7
    out = apply_duhamel(lambda s: s * mode, t, GRID, M=4).values
    lam = k**2
    # -i int_0^t e^{-i(t-s) lam} s ds
    ref = -1j * ((1 - np.exp(-1j * lam * t)) / lam**2 - 1j * t / lam) * mode
    assert np.max(np.abs(out - ref)) < 1e-12


def test_duhamel_gaussian_source_convergence():
    g = np.exp(-GRID.sigma**2)

    def src(s):
        return np.cos(3 * s) * g

    coarse = apply_duhamel(src, 1.0, GRID, M=32).values
    fine = apply_duhamel(src, 1.0, GRID, M=64).values
    ref = apply_duhamel(src, 1.0, GRID, M=512).values
    e1, e2 = np.max(np.abs(coarse - ref)), np.max(np.abs(fine - ref))
    assert np.log2(e1 / e2) > 1.8
    apply_duhamel(src, 1.0, GRID, M=256, check_tol=1e-4)
    with pytest.raises(QuadratureError):
        apply_duhamel(src, 1.0, GRID, M=2, check_tol=1e-12)


def test_b_duhamel_self_convergence(pair_profile):
    ctx = SourceContext(pair_profile, ALPHA, GRID)
    apply_duhamel(ctx.b, T0, GRID, M=256, check_tol=1e-8)


# --- fixed point

def test_ladder():
    t = ladder(1.0, 3)
    assert t.tolist() == [0.125, 0.25, 0.5, 1.0]


@pytest.fixture(scope="module")
def pair_r(pair_profile):
    return solve_r(pair_profile, ModelParams(alpha=ALPHA, t0=T0), "pair", grid=GRID, M=64, J=4)


def test_solve_r_pair(pair_r):
    assert pair_r.report.total <= 1
    assert pair_r.meta["iterations"] <= 5
    assert all(r < 0.5 for r in pair_r.meta["ratios"])
    assert pair_r.meta["local_margin"] > 0
    assert pair_r.times.size == 5 and pair_r.t0 == T0


def test_contraction_probe(pair_profile, pair_r):
    params = ModelParams(alpha=ALPHA, t0=T0)
    bump = 1e-3 * np.sqrt(pair_r.times)[:, None] * np.exp(-GRID.sigma**2)
    pert = pair_r._with_frames(pair_r.frames + bump)
    q = contraction_probe(pair_r, pert, pair_profile, params, "pair", M=64)
    assert 0 <= q < 0.5
    with pytest.raises(DomainError):
        contraction_probe(pair_r, pair_r, pair_profile, params, "pair", M=64)


def test_trajectory_roundtrip(pair_r, tmp_path):
    save_trajectory(pair_r, tmp_path)
    back = load_trajectory(tmp_path)
    assert np.array_equal(back.frames, pair_r.frames)
    assert np.array_equal(back.times, pair_r.times)
    assert back.meta["iterations"] == pair_r.meta["iterations"]
    assert x_norm(back).total == pytest.approx(pair_r.report.total, rel=1e-14)


def test_unknown_mode(pair_profile):
    with pytest.raises(DomainError):
        solve_r(pair_profile, ModelParams(alpha=ALPHA, t0=T0), "triangle", grid=GRID)


def test_trajectory_ladders_must_match():
    a = PerturbationTrajectory(GRID, np.array([0.5, 1.0]), np.zeros((2, GRID.n)), ALPHA)
    b = PerturbationTrajectory(GRID, np.array([0.25, 1.0]), np.zeros((2, GRID.n)), ALPHA)
    with pytest.raises(DomainError):
        a - b
