import dataclasses
import json

import numpy as np
import pytest

from dpmto.analysis import AnalysisModel, objective
from dpmto.basis import gauss_rule
from dpmto.cli import main
from dpmto.design import BackgroundGrid
from dpmto.driver import RunConfig, reachable_design_counts, reference_accuracy, reference_resolution, run
from dpmto.errors import ConfigurationError
from dpmto.mesh import build_mesh
from dpmto.io import grid_from_raster, read_pgm, write_csv, write_pgm
from dpmto.problems import ProblemSpec

SMALL = dict(nx=8, ny=4, reference_scale=2, compute_reference=False)


def test_config_validation_and_round_trip(tmp_path):
    cfg = RunConfig(V0=0.3, seed=4)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert RunConfig(mode="baseline").mode == "uniform_baseline"
    assert (cfg.move, cfg.relative_stop) == (0.2, False)
    inv = RunConfig(problem="force_inverter")
    assert (inv.move, inv.relative_stop) == (0.02, True)
    assert RunConfig(problem="force_inverter", move=0.1, relative_stop=False).move == 0.1
    assert cfg.scaled(0.5).nx == 20 and cfg.scaled(0.5).ny == 10
    for bad in (dict(nx=10, ny=10), dict(mode="fast"), dict(V0=1.5), dict(problem="bridge"), dict(q_schedule="x")):
        with pytest.raises(ConfigurationError):
            RunConfig(**bad)
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"volume": 0.4})
    with pytest.raises(ConfigurationError):
        cfg.scaled(0.33)
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        RunConfig.from_json(path)


def test_reachable_design_counts():
    assert reachable_design_counts(RunConfig()) == [1, 5, 15, 16, 29, 47, 64]


def test_adaptive_run_statistics():
    report = run(RunConfig(**SMALL, n_cycles=3))
    assert len(report.cycles) == 3
    assert report.J == pytest.approx(report.final.J)
    assert abs(report.final.volume - 0.45) < 1e-9
    assert set(report.indicators) == {1, 2} and set(report.mesh_snapshots) == {1, 2, 3}
    thresholds = [c.threshold for c in report.cycles]
    assert thresholds == pytest.approx([0.04, 0.024, 0.0144])
    for c in report.cycles:
        assert c.background_m**2 >= max(r[3] for r in report.mesh_snapshots[c.cycle])


def test_single_cycle_is_plain_mto():
    report = run(RunConfig(**SMALL, n_cycles=1))
    assert len(report.cycles) == 1 and not report.indicators
    assert report.final.n_design == 8 * 4 * 16


def test_baseline_mode():
    report = run(RunConfig(**SMALL, mode="uniform_baseline"))
    assert report.final.n_design == 8 * 4 * 64
    assert report.mesh.background_m == 8
    assert report.final.free_dofs == (5 * 8 + 1) * (5 * 4 + 1) * 2 - 2 * (5 * 4 + 1)
    # stops on the last adaptive cycle's threshold
    assert report.final.threshold == pytest.approx(0.04 * 0.6**3)


def test_solid_design_reference_accuracy():
    # distributed load: no point singularity, so both meshes converge to the same value
    cfg = RunConfig(problem="cantilever_distributed", nx=20, ny=10, reference_scale=4)
    grid = BackgroundGrid(20, 10, 2, 0.1, np.ones(800))
    J_ref, res = reference_accuracy(grid, cfg.problem_spec(), cfg)
    assert res == (80, 40)
    mesh = build_mesh(20, 10, 2.0, 2, 4)
    model = AnalysisModel(mesh, [gauss_rule(3)] * 200, cfg.problem_spec().boundary_conditions(), cfg.material())
    J = objective(model.solve(np.ones(200 * 9)))
    assert J / J_ref == pytest.approx(1.0, abs=2e-2)


def test_reference_resolution_must_divide():
    cfg = RunConfig(nx=8, ny=4, reference_scale=3)
    grid = BackgroundGrid(8, 4, 2, 0.25, np.ones(128))
    with pytest.raises(ConfigurationError):
        reference_resolution(grid, cfg)
    assert reference_resolution(grid, cfg, adjust=True) == (16, 8, 1)


def test_pgm_round_trip(tmp_path):
    raster = np.random.default_rng(0).integers(0, 256, (4, 6)) / 255.0
    write_pgm(tmp_path / "a.pgm", raster)
    assert np.allclose(read_pgm(tmp_path / "a.pgm"), raster, atol=1e-12)
    # row 0 (y = 0) is the bottom line of the image
    data = (tmp_path / "a.pgm").read_bytes()
    assert data[-6] == round(255 * (1 - raster[0, 0]))
    (tmp_path / "b.pgm").write_text("P2\n# comment\n2 1\n255\n0 255\n")
    assert np.allclose(read_pgm(tmp_path / "b.pgm"), [[1.0, 0.0]])
    (tmp_path / "c.pgm").write_text("P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ConfigurationError):
        read_pgm(tmp_path / "c.pgm")


def test_grid_from_raster_checks_tiling():
    g = grid_from_raster(np.ones((8, 16)), 8, 4, 0.25)
    assert g.m == 2
    with pytest.raises(ConfigurationError):
        grid_from_raster(np.ones((8, 15)), 8, 4, 0.25)


def test_csv_writes_exact_floats(tmp_path):
    write_csv(tmp_path / "x.csv", ("a", "b"), [(1, 0.1 + 0.2), (np.int64(2), np.float64(1 / 3))])
    lines = (tmp_path / "x.csv").read_text().splitlines()
    assert lines == ["a,b", "1,0.30000000000000004", "2,0.3333333333333333"]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"problem": "force_inverter", "V0": 0.3, "nx": 8, "ny": 4, "n_cycles": 2,
                                "reference_scale": 24}))
    return path


def test_cli_solve_and_verify(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(config_file), "--out", str(out), "--timing"]) == 0
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["J"] < 0  # the inverter output moves against the input force
    names = {p.name for p in out.iterdir()}
    assert {"design_cycle1.pgm", "design_cycle2.pgm", "design_cycle2.txt", "mesh_cycle1.csv", "mesh_cycle2.csv",
            "indicators_cycle1.csv", "log.csv", "summary.json", "timing.json"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["J_over_J_ref"] == pytest.approx(line["J_over_J_ref"])
    assert "wall_clock" not in json.dumps(summary)
    raster = np.loadtxt(out / "design_cycle2.txt")
    assert np.allclose(read_pgm(out / "design_cycle2.pgm"), raster, atol=0.5 / 255)
    log_rows = (out / "log.csv").read_text().splitlines()
    assert log_rows[0] == "cycle,iteration,J,volume,threshold,stopped"

    assert main(["verify", "--design", str(out / "design_cycle2.pgm"), "--config", str(config_file),
                 f"--J={line['J']}"]) == 0
    v = json.loads(capsys.readouterr().out.strip())
    # the PGM quantizes densities to 8 bits, so the re-evaluation is close but not identical
    assert v["J_over_J_ref"] == pytest.approx(line["J_over_J_ref"], rel=0.05)


@pytest.mark.parametrize("content,code", [('{"nx": 5, "ny": 5}', 2), ('{"V0": 2}', 2), ("not json", 2)])
def test_cli_configuration_errors(tmp_path, capsys, content, code):
    path = tmp_path / "bad.json"
    path.write_text(content)
    assert main(["solve", "--config", str(path)]) == code
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigurationError"


def test_cli_missing_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "none.json")]) == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "FileNotFoundError"


def test_cli_scale_flag(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"V0": 0.5, "nx": 16, "ny": 8, "n_cycles": 1}))
    assert main(["solve", "--config", str(path), "--scale", "0.5", "--no-reference"]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["n_design"] == 8 * 4 * 16 and line["J_over_J_ref"] is None
