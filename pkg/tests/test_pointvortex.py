import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vortexfil.errors import CollisionError, DomainError
from vortexfil.pointvortex import (PointVortexState, PVInvariants, integrate_pv, pair_exact,
                                   pair_state, polygon_exact, polygon_state, pv_rhs, read_csv,
                                   write_csv)


def test_state_validation():
    with pytest.raises(DomainError):
        PointVortexState(0.0, [0, 1], [1.0])
    with pytest.raises(DomainError):
        PointVortexState(0.0, [0, 1], [1.0, 0.0])


def test_triangle_velocity():
    s = polygon_state(3)
    v = pv_rhs(s)
    assert np.allclose(v, 1j * 1.0 * s.z, atol=1e-15)
    assert v[0] == pytest.approx(1j / np.conj(s.z[0]))


def test_pair_velocity():
    v = pv_rhs(PointVortexState(0.0, [1, -1], [1.0, -1.0]))
    assert v[0] == pytest.approx(-0.5j, abs=1e-16)
    assert v[1] == pytest.approx(-0.5j, abs=1e-16)


def test_center_vortex_at_rest():
    s = polygon_state(5, Gamma0=0.7)
    assert abs(pv_rhs(s)[-1]) < 1e-15


def test_collision_detected():
    with pytest.raises(CollisionError) as err:
        pv_rhs(PointVortexState(0.0, [0, 1e-12], [1.0, 1.0]))
    assert set(err.value.pair) == {0, 1}


@pytest.mark.parametrize("N", [2, 3, 4, 5, 6, 7, 8])
def test_polygon_identity(N):
    z = polygon_state(N, theta=0.3).z
    S = np.array([sum((z[j] - z[k]) / abs(z[j] - z[k]) ** 2 for k in range(N) if k != j)
                  for j in range(N)])
    assert np.allclose(S, (N - 1) / (2 * np.conj(z)), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(-np.pi, np.pi), st.complex_numbers(max_magnitude=5),
       st.integers(0, 2**31 - 1))
def test_rhs_equivariance(n, beta, c, seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    G = rng.choice([-1.0, 1.0], n) * rng.uniform(0.5, 2, n)
    d = np.abs(z[:, None] - z[None, :]) + np.eye(n)
    if d.min() < 1e-3:
        return
    v = pv_rhs(PointVortexState(0.0, z, G))
    rot = pv_rhs(PointVortexState(0.0, np.exp(1j * beta) * z, G))
    sh = pv_rhs(PointVortexState(0.0, z + c, G))
    assert np.allclose(rot, np.exp(1j * beta) * v, atol=1e-9 * (1 + np.abs(v).max()))
    assert np.allclose(sh, v, atol=1e-9 * (1 + np.abs(v).max()))


@pytest.mark.parametrize("N", [3, 4, 5])
def test_rotating_polygon(N):
    s0 = polygon_state(N)
    traj = integrate_pv(s0, 1.0, 1e-3)
    z = np.array([s.z for s in traj])
    t = np.array([s.t for s in traj])
    assert np.max(np.abs(z - polygon_exact(s0, t))) < 1e-8
    assert np.max(np.abs(traj[-1].z - np.exp(1j * (N - 1) / 2) * s0.z)) < 1e-8


@pytest.mark.parametrize("N", [3, 4, 5])
def test_stationary_polygon_with_center(N):
    s0 = polygon_state(N, Gamma0=-(N - 1) / 2)
    traj = integrate_pv(s0, 1.0, 1e-3)
    assert max(np.max(np.abs(s.z - s0.z)) for s in traj) < 1e-10


def test_pair_translation():
    s0 = pair_state(1.0)
    traj = integrate_pv(s0, 1.0, 1e-3)
    t = np.array([s.t for s in traj])
    assert np.max(np.abs(np.array([s.z for s in traj]) - pair_exact(s0, t))) < 1e-12


@pytest.mark.parametrize("state", [polygon_state(4), polygon_state(3, Gamma0=0.4),
                                   PointVortexState(0.0, [1, -1 + 0.3j, 0.5j], [1.0, -0.7, 2.0])])
def test_invariants_conserved(state):
    traj = integrate_pv(state, 1.0, 1e-3)
    drift = PVInvariants.of(traj[-1]).drift(PVInvariants.of(traj[0]))
    assert max(drift.values()) <= 1e-8


def test_integrate_rejects_bad_steps():
    with pytest.raises(DomainError):
        integrate_pv(polygon_state(3), 1.0, 0.0)
    with pytest.raises(DomainError):
        integrate_pv(polygon_state(3), 1e-4, 1e-3)


def test_csv_roundtrip(tmp_path):
    traj = integrate_pv(polygon_state(3, Gamma0=-1.0), 0.1, 0.01)
    path = tmp_path / "pv.csv"
    write_csv(traj, path, {"note": "stationary"})
    back = read_csv(path)
    assert len(back) == len(traj)
    assert np.array_equal(back[-1].z, traj[-1].z)
    assert np.array_equal(back[0].Gamma, traj[0].Gamma)
    assert path.read_text().startswith("# Gamma=")
