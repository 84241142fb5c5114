import json

import numpy as np
import pytest

from epcag.cli import main
from epcag.errors import ConfigError
from epcag.harness import (
    ExperimentConfig,
    build_system,
    catalog_list,
    run,
    schedule_from_dict,
    schedule_to_dict,
)
from epcag.schedule import make_schedule


def simulate_config(**overrides):
    cfg = {
        "recipe": "simulate",
        "system": {"matrix": [[-1.0, 0.0], [0.0, 0.0]],
                   "nonlinearity": {"name": "tanh-coupled",
                                    "params": {"amp": 0.01}}},
        "schedule": {"kind": "epca", "window": [0, 10]},
        "solver": {"step": 0.1, "tol": 1e-8},
        "run": {"t0": 0.0, "z0": [1.0, 0.5], "t_end": 8.0},
        "seed": 3,
    }
    cfg.update(overrides)
    return cfg


class TestCatalog:
    def test_required_entries(self):
        entries = {e["name"]: e for e in catalog_list()}
        assert entries["zero"]["lipschitz"] == "l = 0"
        assert "-w^2" in entries["example1-quadratic"]["doc"]
        assert "b w" in entries["epca-linear"]["doc"]
        assert "center-cubic" in entries and "tanh-coupled" in entries

    def test_build_epca_linear(self):
        sys = build_system({"matrix": [[-1.0]],
                            "nonlinearity": {"name": "epca-linear",
                                             "params": {"b": 0.25}}})
        assert sys.lipschitz_l == 0.25
        np.testing.assert_allclose(sys.f(0.0, np.array([0.0]),
                                         np.array([2.0])), [0.5])

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            build_system({"matrix": [[-1.0]],
                          "nonlinearity": {"name": "nope"}})


class TestScheduleRoundTrip:
    def test_epca(self):
        sched = schedule_from_dict({"kind": "epca", "window": [0, 5]})
        d = schedule_to_dict(sched)
        again = schedule_from_dict(d)
        np.testing.assert_array_equal(sched.thetas, again.thetas)

    def test_randomized_to_explicit(self):
        sched = make_schedule("randomized", window=(0, 10), theta_bound=1.0,
                              seed=2)
        d = schedule_to_dict(sched)
        assert d["kind"] == "explicit"
        again = schedule_from_dict(d)
        np.testing.assert_array_equal(sched.zetas, again.zetas)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            schedule_from_dict({"kind": "epca"})


class TestConfig:
    def test_unknown_recipe(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"recipe": "nope"})

    def test_missing_schedule(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"recipe": "simulate", "system": {}})

    def test_unknown_solver_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(simulate_config(
                solver={"step": 0.1, "bogus": 1}))

    def test_nonpositive_step(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(simulate_config(
                solver={"step": -0.1}))


class TestRun:
    def test_simulate_writes_artifacts(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config())
        status = run(cfg, tmp_path)
        assert status == 0
        assert (tmp_path / "manifest").exists()
        assert (tmp_path / "trajectory_forward.csv").exists()
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["trajectory"]["direction"] == "forward"
        manifest = (tmp_path / "manifest").read_text()
        assert "seed: 3" in manifest and "config:" in manifest

    def test_deterministic_outputs(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config())
        run(cfg, tmp_path / "a")
        run(cfg, tmp_path / "b")
        csv_a = (tmp_path / "a" / "trajectory_forward.csv").read_bytes()
        csv_b = (tmp_path / "b" / "trajectory_forward.csv").read_bytes()
        assert csv_a == csv_b
        ma = [ln for ln in (tmp_path / "a" / "manifest").read_text().splitlines()
              if not ln.startswith("timestamp:")]
        mb = [ln for ln in (tmp_path / "b" / "manifest").read_text().splitlines()
              if not ln.startswith("timestamp:")]
        assert ma == mb

    def test_numerical_failure_status_and_record(self, tmp_path):
        cfg = ExperimentConfig.from_dict({
            "recipe": "simulate",
            "system": {"matrix": [[3.0]],
                       "nonlinearity": {"name": "example1-quadratic",
                                        "params": {"radius": 15.0}}},
            "schedule": {"kind": "alternating", "window": [-2, 3]},
            "solver": {"step": 0.02, "tol": 1e-8},
            "run": {"t0": -1.0, "z0": [-10.0], "t_end": 1.0},
        })
        status = run(cfg, tmp_path)
        assert status == 3
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["error"]["type"] == "NonContractionError"
        assert rep["error"]["module"] == "solver"
        assert (tmp_path / "manifest").exists()  # crash forensics

    def test_backward_recipe(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config(
            recipe="continue-backward",
            run={"t0": 5.0, "z0": [0.2, 0.5], "t_start": 1.0}))
        assert run(cfg, tmp_path) == 0
        assert (tmp_path / "trajectory_backward.csv").exists()

    def test_conditions_recipe(self, tmp_path, capsys):
        cfg = ExperimentConfig.from_dict(simulate_config(recipe="conditions"))
        assert run(cfg, tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        names = {e["name"] for e in rep["entries"]}
        assert "contraction-smallness" in names
        assert "two_p_l" in rep["constants"]
        assert "condition" in capsys.readouterr().out

    def test_manifold_F_recipe(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config(
            recipe="manifold-F",
            schedule={"kind": "epca", "window": [-50, 60]},
            manifold={"tol": 1e-7, "quad_step": 0.1},
            run={"anchor_index": 0, "grid": {"lo": -1.0, "hi": 1.0,
                                             "count": 5}}))
        assert run(cfg, tmp_path) == 0
        lines = (tmp_path / "manifold_F.csv").read_text().strip().splitlines()
        assert lines[0] == "c_1,F_1"
        assert len(lines) == 6
        # the middle grid point is c = 0, whose graph value is 0
        mid = lines[3].split(",")
        assert float(mid[0]) == 0.0 and abs(float(mid[1])) < 1e-10

    def test_stability_recipe(self, tmp_path, capsys):
        cfg = ExperimentConfig.from_dict({
            "recipe": "stability",
            "system": {"matrix": [[-1.0]],
                       "nonlinearity": {"name": "zero"}},
            "schedule": {"kind": "epca", "window": [0, 25]},
            "stability": {"radii": [0.1], "horizon": 20.0,
                          "t0_samples": [0.0], "n_random_dirs": 0,
                          "step": 0.2},
        })
        assert run(cfg, tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["verdict"]["classification"] == "exponential"
        assert "exponential" in capsys.readouterr().out

    def test_example1_recipe(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"recipe": "example1",
                                          "solver": {"step": 0.01}})
        assert run(cfg, tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        fwd = rep["forward_noncontinuation"]
        assert fwd["discriminant"] < 0 and not fwd["real_anchor_exists"]
        assert fwd["outcome"] == "non-continuation"
        bwd = rep["backward_nonuniqueness"]
        assert bwd["closed_form_endpoint_gap"] < 1e-10
        assert "non-uniqueness" in bwd["outcome"]
        assert (tmp_path / "trajectory_branch0.csv").exists()


class TestCli:
    def test_catalog_listing(self, capsys):
        assert main(["catalog"]) == 0
        out = capsys.readouterr().out
        assert "example1-quadratic" in out

    def test_end_to_end(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(simulate_config()))
        out_dir = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg_path),
                     "--out", str(out_dir), "--step", "0.2"]) == 0
        manifest = (out_dir / "manifest").read_text()
        assert "'step': 0.2" in manifest or '"step": 0.2' in manifest

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"system": {}}))
        assert main(["simulate", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 2


class TestHeavyRecipes:
    def test_manifold_G_recipe(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config(
            recipe="manifold-G",
            schedule={"kind": "epca", "window": [-50, 60]},
            manifold={"tol": 1e-6, "quad_step": 0.1},
            run={"anchor_index": 0, "grid": {"lo": -1.0, "hi": 1.0,
                                             "count": 3}}))
        assert run(cfg, tmp_path) == 0
        lines = (tmp_path / "manifold_G.csv").read_text().strip().splitlines()
        assert lines[0] == "v_1,G_1"
        assert len(lines) == 4

    def test_reduce_recipe_zero_family(self, tmp_path, capsys):
        cfg = ExperimentConfig.from_dict({
            "recipe": "reduce",
            "system": {"matrix": [[-1.0, 0.0], [0.0, 0.0]],
                       "nonlinearity": {"name": "zero"}},
            "schedule": {"kind": "epca", "window": [-40, 60]},
            "solver": {"step": 0.2, "tol": 1e-8},
            "manifold": {"tol": 1e-6, "quad_step": 0.1, "cache_box": 1.5,
                         "cache_resolution": 5, "time_period": 1.0,
                         "time_subdiv": 1},
            "stability": {"radii": [0.1], "horizon": 20.0,
                          "t0_samples": [0.0], "n_random_dirs": 2,
                          "step": 0.2},
        })
        assert run(cfg, tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["agree"] is True
        assert rep["full"]["classification"] == "stable"
        assert "reduced" in capsys.readouterr().out

    def test_phase_recipe(self, tmp_path):
        cfg = ExperimentConfig.from_dict(simulate_config(
            recipe="phase",
            schedule={"kind": "epca", "window": [-60, 80]},
            manifold={"tol": 1e-7, "quad_step": 0.1},
            run={"anchor_index": 0, "z0": [0.5, 0.8]}))
        assert run(cfg, tmp_path) == 0
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["decay"]["bounded"] is True
        assert (tmp_path / "trajectory_companion.csv").exists()
        assert (tmp_path / "trajectory_solution.csv").exists()
