import json
import os

import numpy as np
import pytest

from gradwave import DiscreteCurve, HardwareSpec, InvalidArgument
from gradwave import io
from gradwave.cli import main, build_parser, resolve_config
from gradwave.density import Grid, radial_density


class TestIO:
    def test_curve_round_trip(self, tmp_path, rng):
        c = DiscreteCurve(rng.normal(size=(11, 2)), 0.004)
        p = tmp_path / "c.csv"
        io.atomic_write_text(p, io.curve_to_csv(c))
        back = io.read_curve_csv(p)
        np.testing.assert_array_equal(back.points, c.points)
        assert back.dt == pytest.approx(0.004, rel=1e-12)

    def test_density_round_trip(self, tmp_path):
        tg = radial_density(3, 6.0, 16)
        p = tmp_path / "d.csv"
        io.atomic_write_text(p, io.grid_to_csv(tg.grid, tg.values))
        back = io.read_density_csv(p)
        assert back.grid.resolution == 16 and back.k_max == pytest.approx(6.0)
        np.testing.assert_allclose(back.values, tg.values, rtol=1e-12)

    def test_grid_row_major(self):
        g = Grid(1.0, 2)
        lines = io.grid_to_csv(g, np.arange(4.0).reshape(2, 2)).splitlines()
        assert lines[0] == "kx,ky,value"
        rows = [list(map(float, l.split(","))) for l in lines[1:]]
        assert [r[0] for r in rows] == [-0.5, -0.5, 0.5, 0.5]
        assert [r[2] for r in rows] == [0, 1, 2, 3]

    @pytest.mark.parametrize(
        "text",
        ["t_ms,kx\n0,0\n", "time,kx,ky\n0,0,0\n1,1,1\n", "t_ms,kx,ky\n0,0,0\n1,x,1\n", "t_ms,kx,ky\n0,0,0\n1,1,1\n3,1,1\n"],
    )
    def test_bad_curve(self, tmp_path, text):
        p = tmp_path / "bad.csv"
        p.write_text(text)
        with pytest.raises(InvalidArgument):
            io.read_curve_csv(p)

    def test_gradient_units(self):
        c = DiscreteCurve(np.array([[0.0, 0.0], [0.004 * 17.0304, 0.0]]), 0.004)
        lines = io.gradient_to_csv(c, HardwareSpec()).splitlines()
        assert lines[0] == "t_ms,gx_mT_m,gy_mT_m"
        assert float(lines[2].split(",")[1]) == pytest.approx(40.0)

    def test_sidecar(self, tmp_path):
        p = io.write_with_sidecar(tmp_path / "x.txt", "hi\n", {"a": 1}, 0.5)
        meta = json.loads((tmp_path / "x.txt.meta.json").read_text())
        assert p.read_text() == "hi\n"
        assert meta["config_hash"] == io.config_hash({"a": 1})
        assert meta["wall_time_s"] == 0.5 and "numpy" in meta["versions"]

    def test_atomic_failure_leaves_nothing(self, tmp_path):
        target = tmp_path / "y.txt"
        with pytest.raises(TypeError):
            io.atomic_write_text(target, 123)
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []

    def test_read_json_errors(self, tmp_path):
        with pytest.raises(InvalidArgument):
            io.read_json(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("{")
        with pytest.raises(InvalidArgument):
            io.read_json(tmp_path / "bad.json")


def run(*argv):
    return main([str(a) for a in argv])


class TestCli:
    def test_gen_project_idempotent(self, tmp_path, capsys):
        assert run("gen", "rosette", "--out-dir", tmp_path) == 0
        assert (tmp_path / "rosette.csv.meta.json").exists()
        assert run("project", tmp_path / "rosette.csv", "--out-dir", tmp_path) == 0
        rep = json.loads((tmp_path / "project_report.json").read_text())
        assert rep["residuals"]["speed_residual"] <= 1e-6 and rep["residuals"]["accel_residual"] <= 1e-6
        for name in ("projected.csv", "gradient.csv", "project_report.json"):
            assert (tmp_path / f"{name}.meta.json").exists()
        assert run("project", tmp_path / "projected.csv", "--out", "again.csv", "--report-out", "again.json", "--out-dir", tmp_path) == 0
        first = io.read_curve_csv(tmp_path / "projected.csv").points
        again = io.read_curve_csv(tmp_path / "again.csv").points
        assert np.linalg.norm(again - first) <= 1e-6 * np.linalg.norm(first)

    def test_missing_input(self, tmp_path, capsys):
        assert run("project", tmp_path / "nope.csv", "--out-dir", tmp_path) == 2
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error E_")
        assert list(tmp_path.iterdir()) == []

    def test_malformed_config(self, tmp_path):
        (tmp_path / "cfg.json").write_text("[1, 2")
        assert run("gen", "rosette", "--config", tmp_path / "cfg.json", "--out-dir", tmp_path) == 2

    def test_bad_flag(self):
        assert run("gen", "rosette", "--speed-frac", "fast") == 2

    def test_dependent_constraints(self, tmp_path, capsys):
        c = DiscreteCurve(np.cumsum(np.full((20, 2), 0.01), axis=0), 0.004)
        io.atomic_write_text(tmp_path / "c.csv", io.curve_to_csv(c))
        cons = [{"type": "point", "at": "start"}, {"type": "point", "at": "start"}]
        (tmp_path / "k.json").write_text(json.dumps(cons))
        code = run("project", tmp_path / "c.csv", "--constraints", tmp_path / "k.json", "--out-dir", tmp_path / "o")
        assert code == 4
        assert not (tmp_path / "o").exists() or list((tmp_path / "o").iterdir()) == []

    def test_project_with_pins(self, tmp_path):
        c = DiscreteCurve(np.cumsum(np.full((50, 2), 0.05), axis=0) + 1.0, 0.004)
        io.atomic_write_text(tmp_path / "c.csv", io.curve_to_csv(c))
        cons = {"constraints": [{"type": "point", "at": "start"}, {"type": "initial_speed"}]}
        (tmp_path / "k.json").write_text(json.dumps(cons))
        assert run("project", tmp_path / "c.csv", "--constraints", tmp_path / "k.json", "--out-dir", tmp_path) == 0
        rep = json.loads((tmp_path / "project_report.json").read_text())
        assert rep["affine_residual"] <= 1e-8 and rep["constraint_rows"] == 4

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("GRADWAVE_OUT_DIR", str(tmp_path / "env"))
        assert run("gen", "tsp", "--cities", 20) == 0
        assert (tmp_path / "env" / "tsp.csv").exists()
        assert run("gen", "tsp", "--cities", 20, "--out-dir", tmp_path / "flag") == 0
        assert (tmp_path / "flag" / "tsp.csv").exists()

    def test_precedence(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"seed": 5, "mode": "RV", "jobs": 2}))
        parse = build_parser().parse_args
        cfg = resolve_config(parse(["--config", str(tmp_path / "cfg.json"), "gen", "rosette", "--seed", "9"]))
        assert cfg.seed == 9 and cfg.mode.value == "RV" and cfg.jobs == 2
        cfg = resolve_config(parse(["gen", "rosette"]))
        assert cfg.seed == 0 and cfg.mode.value == "RIV" and cfg.jobs == 1

    def test_sample_dt_guard(self, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"dt_curve": 0.004, "dt_sample": 0.001}))
        assert run("gen", "rosette", "--config", tmp_path / "cfg.json", "--out-dir", tmp_path) == 2

    def test_deterministic_tsp(self, tmp_path):
        for d in ("a", "b"):
            assert run("gen", "tsp", "--cities", 30, "--seed", 7, "--out-dir", tmp_path / d, "--density-out", "d.csv") == 0
        assert (tmp_path / "a" / "tsp.csv").read_bytes() == (tmp_path / "b" / "tsp.csv").read_bytes()
        assert (tmp_path / "a" / "d.csv").read_bytes() == (tmp_path / "b" / "d.csv").read_bytes()

    def test_reparam_and_analyze(self, tmp_path):
        assert run("gen", "tsp", "--cities", 30, "--out-dir", tmp_path, "--density-out", "d.csv") == 0
        assert run("reparam", tmp_path / "tsp.csv", "--out-dir", tmp_path) == 0
        rep = json.loads((tmp_path / "reparam_report.json").read_text())
        assert rep["T_rep"] > 0
        assert run("analyze", tmp_path / "tsp.csv", "--density", tmp_path / "d.csv", "--out-dir", tmp_path) == 0
        an = json.loads((tmp_path / "analysis.json").read_text())
        assert 0 <= an["rel_error"] <= 2 and an["bins"] == 64

    def test_bench_mc_small(self, tmp_path):
        code = run("bench", "mc_density", "--replications", 2, "--cities", 20, "--out-dir", tmp_path)
        assert code == 0
        summary = json.loads((tmp_path / "mc_density_summary.json").read_text())
        assert summary["replications"] == 2
        for arm in summary["arms"]:
            assert (tmp_path / f"mc_density_{arm}_diff.csv").exists()
