import csv
import os

import numpy as np
import pytest

from risrobust.cli import (ExperimentSpec, apply_caps, figure_recipes, grid_shape, main,
                           rng_stream, run, run_one, validate_file)
from risrobust.scenario import SystemConfig

FIXTURE = os.path.join(os.path.dirname(__file__), "fixtures", "scsie_pcu_solution.txt")


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_single_run_artifacts(tmp_path):
    spec = ExperimentSpec("scsie-pcu", realizations=1, trials=500)
    rows = run(spec, str(tmp_path))
    assert len(rows) == 2
    assert rows[0] == ("sweep_value,seed,algorithm,power_dbm,power_linear,ao_iters,min_rate,"
                       "mean_outage,status")
    sols = [f for _, _, fs in os.walk(tmp_path) for f in fs if f == "solution.txt"]
    assert len(sols) == 1
    assert (tmp_path / "manifest.txt").exists()
    row = read_rows(tmp_path / "results.csv")[0]
    assert float(row["power_dbm"]) == pytest.approx(10 * np.log10(float(row["power_linear"])) + 30)


def test_manifest_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--algo", "scsie-pcu", "--realizations", "2", "--sweep", "R_th=1,2",
                 "--trials", "300", "--seed", "7", "--out", str(a)]) == 0
    assert main(["run", "--config", str(a / "manifest.txt"), "--out", str(b)]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    manifest = (a / "manifest.txt").read_text()
    for key in ("M_h", "kappa_db", "sigma2_dbm", "omega_H", "epsilon", "max_ao", "cap_dims",
                "code version"):
        assert key in manifest


def test_parallel_matches_serial(tmp_path):
    spec = ExperimentSpec("scsie-pcu", sweep_key="R_th", sweep_values=(1.0, 2.0), realizations=2,
                          trials=200)
    s1 = run(spec, str(tmp_path / "s"), workers=1)
    s2 = run(spec, str(tmp_path / "p"), workers=2)
    assert s1 == s2


def test_rng_streams_independent_of_sweep():
    a = rng_stream(3, 1, "channels").integers(0, 2 ** 32, 4)
    b = rng_stream(3, 1, "channels").integers(0, 2 ** 32, 4)
    c = rng_stream(3, 1, "algorithm").integers(0, 2 ** 32, 4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_rate_sweep_power_non_decreasing(tmp_path):
    spec = ExperimentSpec("scsie-pcu", sweep_key="R_th", sweep_values=(1.0, 2.0, 3.0, 4.0),
                          realizations=10, trials=200)
    run(spec, str(tmp_path))
    rows = read_rows(tmp_path / "results.csv")
    means = [np.mean([float(r["power_linear"]) for r in rows if float(r["sweep_value"]) == v])
             for v in spec.sweep_values]
    assert np.all(np.diff(means) >= 0)


def test_failures_are_recorded_not_raised(tmp_path):
    spec = ExperimentSpec("scsie-pcu", omega_H=0.9, config=SystemConfig(R_th=12.0), trials=100)
    r = run_one(spec, None, 0)
    assert r["solution"] is None and r["status"].startswith("failed")
    rows = run(spec, str(tmp_path))
    assert rows[1].endswith(r["status"])


def test_spec_invariants():
    with pytest.raises(ValueError):
        ExperimentSpec("bogus")
    with pytest.raises(ValueError):
        ExperimentSpec(realizations=0)
    with pytest.raises(ValueError):
        ExperimentSpec(sweep_key="not_a_key", sweep_values=(1,))
    assert main(["run", "--sweep", "nope=1,2", "--out", "x"]) == 2


def test_caps_and_grid():
    assert grid_shape(8) == (4, 2) and grid_shape(16) == (4, 4) and grid_shape(7) == (7, 1)
    cfg, capped = apply_caps(SystemConfig(N_h=4, N_v=4, K=4, user_pos=None), (8, 8, 3))
    assert capped and cfg.N == 8 and cfg.K == 3
    cfg, capped = apply_caps(SystemConfig(), (8, 8, 3))
    assert not capped


def test_figure_recipes():
    f2 = figure_recipes("fig2")
    assert {s.algorithm for s in f2} >= {"bcsie-pcu", "bcsie-fcu", "scsie-pcu", "scsie-fcu"}
    for s in f2:
        assert (s.config.M, s.config.N, s.config.K, s.config.R_th) == (3, 3, 3, 3.0)
        assert s.omega_H == 0.01
        if s.algorithm.endswith("fcu"):
            assert s.omega_D == 0.02
    f4 = figure_recipes("fig4")
    assert {s.config.K for s in f4} == {2, 3}
    assert all(s.config.M == 6 and s.config.N == 6 and s.sweep_key == "R_th" for s in f4)
    f7 = figure_recipes("fig7")
    assert {s.omega_H for s in f7} == {0.05, 0.15} and all(s.sweep_key == "epsilon" for s in f7)
    f6 = figure_recipes("fig6")
    assert {s.omega_H for s in f6} == {0.0, 0.03, 0.06, 0.1, 0.15}
    assert max(max(s.sweep_values) for s in f6) * 2 <= 8
    big = figure_recipes("fig6", cap_dims=(16, 16, 3))
    assert max(max(s.sweep_values) for s in big) * 2 == 16
    assert {s.omega_D for s in figure_recipes("fig8")} >= {0.01, 0.02, 0.03, 0.04}
    assert all(s.algorithm == "scsie-fcu" for s in figure_recipes("fig9"))
    with pytest.raises(ValueError):
        figure_recipes("fig3")


def test_validate_roundtrip_reproduces_report(tmp_path):
    spec = ExperimentSpec("scsie-pcu", trials=400)
    run(spec, str(tmp_path))
    d = tmp_path / "runs" / "v00_s000"
    rep = validate_file(str(d / "solution.txt"))
    assert rep.to_csv() == (d / "report.csv").read_text()
    out = tmp_path / "rep.csv"
    assert main(["validate", str(d / "solution.txt"), "--out", str(out)]) == 0
    assert out.read_text() == rep.to_csv()


def test_validate_rejects_zero_trials_and_bad_files(tmp_path):
    with pytest.raises(ValueError):
        validate_file(FIXTURE, trials=0)
    assert main(["validate", FIXTURE, "--trials", "0"]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("W = 1\n")
    assert main(["validate", str(bad)]) == 2


def test_known_good_fixture_outage():
    rep = validate_file(FIXTURE, trials=10_000, seed=123)
    assert np.all(rep.outage <= 0.05)


def test_bcsie_run_reports_worst_case(tmp_path):
    spec = ExperimentSpec("bcsie-pcu", config=SystemConfig(M_h=2, M_v=1, N_h=2, N_v=1),
                          trials=200, samples=200)
    run(spec, str(tmp_path))
    rep = read_rows(tmp_path / "runs" / "v00_s000" / "report.csv")
    assert all(float(r["worst_case_rate"]) >= 3.0 - 1e-3 for r in rep)


def test_oracle_verb(tmp_path, capsys):
    out = tmp_path / "oracles.csv"
    assert main(["oracle", "--out", str(out)]) == 0
    assert "trace" in out.read_text()
