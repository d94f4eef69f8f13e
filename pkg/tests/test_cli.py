import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from vortexfil.cli import RunConfig, locked_dir, main
from vortexfil.errors import DomainError, VortexfilError
from vortexfil.schrodinger import read_frames

SMALL = ["--L", "40", "--n", "512"]


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def profile_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("prof")
    assert run("profile", "--out", out, "--alpha", 20, "--mode", "pair") == 0
    return out / "profile.json"


def test_profile_command(profile_path):
    out = profile_path.parent
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["alpha"] == 20.0 and cfg["schema_version"] == 1
    rows = list(csv.reader(open(out / "convergence.csv")))
    assert rows[0] == ["iteration", "ratio"] and len(rows) > 1
    assert json.loads(profile_path.read_text())["u_re"][0] == 1.0


def test_profile_small_alpha_fails(tmp_path):
    assert run("profile", "--out", tmp_path, "--alpha", 0.1) == 2


@pytest.mark.parametrize("pv", ["pair", "polygon", "polygon-center"])
def test_pv_command(tmp_path, pv):
    args = ["pv", "--out", tmp_path, "--pv-config", pv, "--t-end", 0.2, "--dt", 1e-3]
    if pv == "polygon-center":
        args += ["--N", 4, "--Gamma0", -1.5]
    assert run(*args) == 0
    drift = json.loads((tmp_path / "invariants.json").read_text())
    assert max(drift.values()) < 1e-8
    assert run("verify", "--out", tmp_path / "v", "--pv", tmp_path / "pv.csv") == 0


def test_simulate_pair_constant(tmp_path):
    assert run("simulate", "--out", tmp_path, *SMALL, "--kind", "pair", "--dt", 0.01,
               "--t-end", 0.5, "--stride", 10) == 0
    t, frames, grid, index = read_frames(tmp_path)
    assert np.max(np.abs(frames - (1 - 1j * t)[:, None])) < 1e-10
    rows = list(csv.reader(open(tmp_path / "summary.csv")))
    assert rows[0] == ["t", "min_separation", "l2_norm", "energy"]
    assert (tmp_path / "plot_min_separation.csv").exists()
    assert (tmp_path / "plot_snapshots.csv").exists()


def test_simulate_bm(tmp_path):
    assert run("simulate", "--out", tmp_path, *SMALL, "--kind", "bm", "--omega", 1,
               "--scenario", "small-energy", "--dt", 0.01, "--t-end", 0.5) == 0
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert min(float(r["min_abs"]) for r in rows) >= 0.5
    E = [float(r["energy"]) for r in rows]
    assert (max(E) - min(E)) / E[0] < 1e-2


def test_simulate_full_kmd_symmetric(tmp_path):
    assert run("simulate", "--out", tmp_path, *SMALL, "--kind", "full_kmd", "--N", 3,
               "--scenario", "symmetric", "--dt", 0.01, "--t-end", 0.2) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["symmetry_deviation"] < 1e-6


def test_simulate_collision_exit(tmp_path):
    code = run("simulate", "--out", tmp_path, *SMALL, "--kind", "pair", "--scenario", "bump",
               "--dt", 0.01, "--t-end", 0.5, "--floor-eps", 2.0)
    assert code == 3
    assert json.loads((tmp_path / "summary.json").read_text())["abort"]["reason"] == "near-collision"


def test_simulate_unknown_scenario(tmp_path):
    assert run("simulate", "--out", tmp_path, "--kind", "bm", "--scenario", "ansatz") == 6


def test_missing_profile_is_io_error(tmp_path):
    assert run("simulate", "--out", tmp_path, "--kind", "pair", "--scenario", "ansatz",
               "--profile", tmp_path / "missing.json") == 5
    assert run("verify", "--out", tmp_path, "--profile", tmp_path / "missing.json") == 5
    assert run("verify", "--out", tmp_path) == 5


def test_verify_profile(profile_path, tmp_path):
    assert run("verify", "--out", tmp_path, "--profile", profile_path) == 0
    data = json.loads((tmp_path / "verify_report.json").read_text())
    assert {d["status"] for d in data} == {"pass"}


def test_verify_corrupted_profile(profile_path, tmp_path):
    d = json.loads(profile_path.read_text())
    d["u_re"][300] = -5.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert run("verify", "--out", tmp_path / "v", "--profile", bad) == 1


def test_fixedpoint_and_verify(profile_path, tmp_path):
    fp = tmp_path / "fp"
    assert run("fixedpoint", "--out", fp, "--profile", profile_path, "--t0", 1e-13, "--L", 20,
               "--n", 2048, "--M", 64, "--J", 4, "--probes", 2, "--seed", 7) == 0
    rep = json.loads((fp / "fixedpoint_report.json").read_text())
    assert rep["xnorm_components"]["total"] <= 1
    assert len(rep["probe_ratios"]) == 2 and max(rep["probe_ratios"]) < 0.5
    assert "far_field_deviation" in rep
    assert run("verify", "--out", tmp_path / "v", "--profile", profile_path,
               "--trajectory", fp) == 0


def test_sweep_command(tmp_path):
    assert run("sweep", "--out", tmp_path, "--sweep", "alpha=20,40", "--m", 4001) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [r["status"] for r in rows] == ["ok", "ok"]


def test_config_roundtrip_and_override(tmp_path):
    cfg = RunConfig(alpha=30.0, kind="bm", omega=1.0, pointvortex=["a.csv"])
    path = tmp_path / "c.json"
    cfg.save(path)
    assert RunConfig.load(path) == cfg
    out = tmp_path / "o"
    assert run("pv", "--config", path, "--out", out, "--t-end", 0.01, "--dt", 1e-3) == 0
    saved = RunConfig.load(out / "config.json")
    assert saved.alpha == 30.0 and saved.t_end == 0.01 and saved.out == str(out)


def test_config_validation():
    with pytest.raises(DomainError):
        RunConfig.from_dict({"alpha": 20.0, "bogus": 1})
    with pytest.raises(DomainError):
        RunConfig(n=7)
    with pytest.raises(DomainError):
        RunConfig(schema_version=99)


def test_output_lock(tmp_path):
    with locked_dir(tmp_path):
        with pytest.raises(VortexfilError):
            with locked_dir(tmp_path):
                pass
    with locked_dir(tmp_path):
        pass


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "vortexfil.cli", "pv", "--out", str(tmp_path),
                          "--t-end", "0.01", "--dt", "0.001"], capture_output=True, text=True)
    assert res.returncode == 0 and "invariant drift" in res.stdout
