import json
import logging

import numpy as np
import pytest

from bathscatter import cli, fdfd
from bathscatter.cli import EXIT_CONFIG, EXIT_FIT, EXIT_OK, EXIT_SOLVER, SweepContext

W0 = 0.35 * 2 * np.pi

BASE = {"geometry": {"kind": "homogeneous"},
        "grid": {"width": 3.0, "resolution": 16},
        "emitter": {"freq0": 0.35, "V0": [0.1, 0.4]},
        "experiment": {"kind": "cross_sections", "freq_window": [0.345, 0.355], "count": 5},
        "output": "out"}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def with_exp(**exp):
    cfg = json.loads(json.dumps(BASE))
    cfg["experiment"] = exp
    return cfg


def manifest(tmp_path):
    return json.loads((tmp_path / "out" / "manifest.json").read_text())


def outputs(tmp_path):
    return {f["path"]: (tmp_path / "out" / f["path"]).read_bytes()
            for f in manifest(tmp_path)["files"]}


def test_cross_sections_resonance(tmp_path):
    assert cli.run(write(tmp_path, BASE)) == EXIT_OK
    for n in range(2):
        data = np.loadtxt(tmp_path / "out" / f"cross_sections_V0-{n}.csv", delimiter=",",
                          skiprows=1)
        mid = data[2]
        assert mid[0] == pytest.approx(W0)
        assert mid[1] == pytest.approx(4 / W0, rel=0.05)
    m = manifest(tmp_path)
    assert m["status"] == "ok" and not m["partial"]
    assert len(m["files"]) == 2 and m["files"][0]["params"]["V0"] == 0.1


def test_rerun_uses_cache_and_is_deterministic(tmp_path, caplog):
    cfg = write(tmp_path, BASE)
    caplog.set_level(logging.INFO, logger="bathscatter")
    assert cli.run(cfg) == EXIT_OK
    first, m1 = outputs(tmp_path), manifest(tmp_path)
    caplog.clear()
    assert cli.run(cfg) == EXIT_OK
    assert "0 solves" in caplog.text
    assert outputs(tmp_path) == first
    assert cli.run(cfg, force_recompute=True) == EXIT_OK
    assert outputs(tmp_path) == first
    m2 = manifest(tmp_path)
    m1.pop("timestamp"), m2.pop("timestamp")
    assert m1 == m2


def test_corrupt_cache_forces_recompute(tmp_path, caplog):
    cfg = write(tmp_path, BASE)
    assert cli.run(cfg) == EXIT_OK
    first = outputs(tmp_path)
    entry = sorted((tmp_path / "out" / "cache").glob("*.bsf"))[0]
    raw = bytearray(entry.read_bytes())
    raw[20] ^= 0x55  # inside the JSON header
    entry.write_bytes(bytes(raw))
    caplog.set_level(logging.INFO, logger="bathscatter")
    assert cli.run(cfg) == EXIT_OK
    assert "1 rejected" in caplog.text and "1 solves" in caplog.text
    assert outputs(tmp_path) == first


def test_threads_do_not_change_results(tmp_path):
    cfg = write(tmp_path, BASE)
    assert cli.run(cfg, cache_dir=tmp_path / "c1") == EXIT_OK
    first = outputs(tmp_path)
    assert cli.run(cfg, cache_dir=tmp_path / "c2", threads=3) == EXIT_OK
    assert outputs(tmp_path) == first


def test_manifest_only(tmp_path):
    assert cli.main(["run", str(write(tmp_path, BASE)), "--emit-manifest-only"]) == EXIT_OK
    m = manifest(tmp_path)
    assert m["status"] == "planned"
    assert not list((tmp_path / "out").glob("*.csv"))


@pytest.mark.parametrize("patch", [
    {"emitter": {"freq0": 0.35, "V0": []}},
    {"emitter": {"freq0": 0.35, "V0": [0.1], "colour": 1}},
    {"emitter": {"freq0": -0.35, "V0": [0.1]}},
    {"experiment": {"kind": "cross_sections", "freq_window": [0.36, 0.34], "count": 5}},
    {"experiment": {"kind": "nope"}},
    {"geometry": {"kind": "raster", "path": "missing.txt"}},
    {"geometry": {"kind": "homogeneous", "eps0": 0}},
    {"grid": {"width": 3.0, "resolution": 16, "pml": {"thickness_cells": 2}}},
    {"emitter": {"freq0": 0.35, "V0": [0.1], "x_d": [50, 0]}},
    {"emitter": {"freq0": 0.35, "V0": [0.1], "model": "non_markovian"}},
])
def test_config_errors(tmp_path, patch):
    cfg = dict(BASE, **patch)
    assert cli.run(write(tmp_path, cfg)) == EXIT_CONFIG


def test_unparseable_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.run(p) == EXIT_CONFIG
    assert cli.run(tmp_path / "absent.json") == EXIT_CONFIG
    assert cli.main(["run", str(p), "--threads", "0"]) == EXIT_CONFIG
    assert cli.main(["frobnicate"]) == EXIT_CONFIG


def test_empty_sweep_is_noop(tmp_path, small_homogeneous):
    ctx = SweepContext(small_homogeneous, tmp_path / "c")
    assert ctx.sweep([], [("dipole", (20, 20))]) == {}
    assert ctx.misses == 0


def test_overlapping_sweeps_share_cache(tmp_path, small_homogeneous):
    ctx = SweepContext(small_homogeneous, tmp_path / "c")
    idx = small_homogeneous.grid.nearest_index((0, 0))
    ctx.sweep([2.0, 2.1], [("dipole", idx)])
    ctx.sweep([2.1, 2.2], [("dipole", idx)])
    assert (ctx.misses, ctx.hits) == (3, 1)


def test_failed_tasks_are_collected(tmp_path, monkeypatch):
    real = fdfd.solve_green

    def flaky(op, idx):
        if abs(op.omega - 0.35 * 2 * np.pi) < 1e-9:
            raise fdfd.SolverError("synthetic failure")
        return real(op, idx)
    monkeypatch.setattr(fdfd, "solve_green", flaky)
    cfg = with_exp(kind="cross_sections", freq_window=[0.34, 0.36], count=3)
    cfg["emitter"]["model"] = "weisskopf_wigner"
    assert cli.run(write(tmp_path, cfg)) == EXIT_SOLVER
    m = manifest(tmp_path)
    assert m["status"] == "solver_failure" and m["partial"]
    assert "synthetic failure" in m["failures"][0]["error"]


def test_sweep_error_keeps_successful_tasks(tmp_path, small_homogeneous, monkeypatch):
    real = fdfd.solve_green

    def flaky(op, idx):
        if op.omega == 2.1:
            raise fdfd.SolverError("boom")
        return real(op, idx)
    monkeypatch.setattr(fdfd, "solve_green", flaky)
    ctx = SweepContext(small_homogeneous, tmp_path / "c")
    idx = small_homogeneous.grid.nearest_index((0, 0))
    with pytest.raises(cli.SweepError) as info:
        ctx.sweep([2.0, 2.1, 2.2], [("dipole", idx)])
    assert [f["omega"] for f in info.value.failures] == [2.1]
    assert ctx.misses == 2
    assert len(list((tmp_path / "c").glob("*.bsf"))) == 2


@pytest.mark.filterwarnings("ignore:fitted Lorentzian")
def test_fit_non_convergence_flags_partial(tmp_path):
    cfg = with_exp(kind="imG_sweep", freq_window=[0.34, 0.36], count=50, refine=False,
                   tol=1e-14, max_terms=1)
    assert cli.run(write(tmp_path, cfg)) == EXIT_FIT
    m = manifest(tmp_path)
    assert m["status"] == "fit_not_converged" and m["partial"]
    fit = json.loads((tmp_path / "out" / "lorentzian_fit.json").read_text())
    assert fit["converged"] is False
    assert (tmp_path / "out" / "imG_spectrum.csv").exists()


def test_markovian_demo(tmp_path):
    cfg = with_exp(kind="markovian_demo", freq_window=[0.34, 0.36], count=11,
                   system={"kind": "two_level"}, n_times=21)
    assert cli.run(write(tmp_path, cfg)) == EXIT_OK
    g = np.loadtxt(tmp_path / "out" / "markovian_green_V0-0.csv", delimiter=",", skiprows=1)
    gamma = -2 * 0.1 ** 2 * manifest(tmp_path)["notes"]["im_green_omega0"]
    ref = 1 / (1j * (W0 - g[:, 0]) + gamma / 2)
    np.testing.assert_allclose(g[:, 1] + 1j * g[:, 2], ref, rtol=1e-12)


def test_markovian_system_from_file(tmp_path):
    from bathscatter.markovian import LevelSystem
    (tmp_path / "sys.json").write_text(LevelSystem.v_system(2.1, 2.3).to_json())
    cfg = with_exp(kind="markovian_demo", freq_window=[0.34, 0.36], count=5,
                   system={"kind": "file", "path": "sys.json"})
    assert cli.run(write(tmp_path, cfg)) == EXIT_OK
    cfg["experiment"]["system"] = {"kind": "file", "path": "nothere.json"}
    assert cli.run(write(tmp_path, cfg)) == EXIT_CONFIG


def test_two_photon_schmidt_small(tmp_path):
    cfg = with_exp(kind="two_photon_schmidt", tau_omega0=220, n_omega=65, n_theta=180,
                   n_coarse=6)
    cfg["emitter"]["V0"] = [0.3]
    assert cli.run(write(tmp_path, cfg)) == EXIT_OK
    doc = json.loads((tmp_path / "out" / "schmidt_V0-0.json").read_text())
    assert len(doc["lambdas"]) == 5
    assert doc["lambdas"][0] == pytest.approx(0.705, abs=0.01)
    for f in manifest(tmp_path)["files"]:
        assert (tmp_path / "out" / f["path"]).exists()


def test_single_scattering_small(tmp_path):
    cfg = with_exp(kind="single_scattering", freq_window=[0.34, 0.36], count=41,
                   freq_angular=[0.35, 0.351], n_angles=180)
    assert cli.run(write(tmp_path, cfg)) == EXIT_OK
    ff = np.loadtxt(tmp_path / "out" / "far_field_0.csv", delimiter=",", skiprows=1)
    assert ff.shape == (180, 6)
    # uniform medium: the emitter pattern is isotropic and the bath does not scatter
    assert np.ptp(ff[:, 2]) < 2e-2 * ff[:, 2].mean()
    assert not ff[:, 1].any()
    assert manifest(tmp_path)["notes"]["green0_peak_counts"] == [1, 1]


def test_angular_frequency_keys(tmp_path):
    cfg = json.loads(json.dumps(BASE))
    cfg["emitter"] = {"omega0": W0, "V0": [0.1, 0.4]}
    cfg["experiment"] = {"kind": "cross_sections", "omega_window": [0.345 * 2 * np.pi,
                                                                    0.355 * 2 * np.pi],
                         "count": 5}
    assert cli.run(write(tmp_path, cfg)) == EXIT_OK
    a = (tmp_path / "out" / "cross_sections_V0-0.csv").read_text()
    cfg["emitter"] = {"freq0": 0.35, "omega0": W0, "V0": [0.1]}
    assert cli.run(write(tmp_path, cfg)) == EXIT_CONFIG
    assert cli.run(write(tmp_path, BASE)) == EXIT_OK
    assert (tmp_path / "out" / "cross_sections_V0-0.csv").read_text() == a


def test_cache_key_distinguishes_inputs(small_homogeneous):
    k = cli.cache_key(small_homogeneous, 2.0, ("dipole", (20, 20)))
    assert k == cli.cache_key(small_homogeneous, 2.0, ("dipole", (20, 20)))
    assert k != cli.cache_key(small_homogeneous, 2.0 + 1e-15, ("dipole", (20, 20)))
    assert k != cli.cache_key(small_homogeneous, 2.0, ("dipole", (20, 21)))
    assert k != cli.cache_key(small_homogeneous, 2.0, ("planewave", (1.0, 0.0)))
