import json
import math
from pathlib import Path

import numpy as np
import pytest

from stochstab.cli import main
from stochstab.dynamics import MapSystem
from stochstab.errors import ValidationError
from stochstab.experiments import ExperimentConfig, build_system, run_example
from stochstab.noise import NoiseModel

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
BUNDLE = ("noisy.csv", "deterministic.csv", "report.json", "manifest.json")
FAST = dict(trials=200, horizon=2000, samples=20_000, product_horizon=2000, replicates=10)


def read_bundle(d):
    return {name: (Path(d) / name).read_bytes() for name in BUNDLE}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


class TestConfig:
    @pytest.mark.parametrize("cfg", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
    def test_default_round_trip(self, cfg):
        first = ExperimentConfig.from_dict(json.loads(cfg.read_text())).to_dict()
        text = json.dumps(first, sort_keys=True)
        again = ExperimentConfig.from_dict(json.loads(text)).to_dict()
        assert json.dumps(again, sort_keys=True) == text

    def test_defaults(self):
        cfg = ExperimentConfig("ex2d_1")
        assert (cfg.epsilon, cfg.rho, cfg.horizon, cfg.trials) == (0.01, 5.0, 10_000, 1000)
        assert cfg.x0 == [1e-3, 0.0]
        assert ExperimentConfig("ex1d_2").x0 == [0.3]

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"example_id": "ex1d_1", "horizn": 10})
        with pytest.raises(ValidationError):
            ExperimentConfig.from_dict({"example_id": "ex9"})

    def test_systems(self):
        assert build_system("ex2d_2b", 0.01, 10.0).noise.rho == 10.0
        np.testing.assert_array_equal(build_system("ex2d_2a", 0.01, 5.0).a, [[1.01, 0.1], [0.0, 1.01]])
        assert build_system("ex1d_2", 0.05, 3.0).nonlinearity.lam == 1.05

    def test_custom_system(self, tmp_path):
        sys = MapSystem(np.diag([1.02, 0.3]), NoiseModel.planar(0.02, 4.0))
        cfg = ExperimentConfig.from_dict(dict(example_id="custom", system=sys.to_dict(), **FAST))
        rep = run_example(cfg, tmp_path)
        assert rep["margin"]["epsilon"] == 0.02
        assert set(read_bundle(tmp_path)) == set(BUNDLE)


class TestBundles:
    def test_ex1d_1(self, tmp_path):
        cfg = ExperimentConfig("ex1d_1")
        rep = run_example(cfg, tmp_path)
        assert rep["margin"]["taylor_margin"] == -0.005
        noisy = np.loadtxt(tmp_path / "noisy.csv", delimiter=",", skiprows=1)
        det = np.loadtxt(tmp_path / "deterministic.csv", delimiter=",", skiprows=1)
        assert noisy[-1, -1] < noisy[0, -1]
        assert det[-1, -1] == pytest.approx(1e-3 * 1.005**10_000, rel=1e-10)

    def test_ex1d_2(self, tmp_path):
        rep = run_example(ExperimentConfig("ex1d_2"), tmp_path)
        det = np.loadtxt(tmp_path / "deterministic.csv", delimiter=",", skiprows=1)
        assert det[-1, 1] == pytest.approx(0.05 / 1.05, abs=1e-9)
        assert rep["terminal"]["majority_converged"]

    @pytest.mark.slow
    def test_ex2d_2b_more_negative(self, tmp_path):
        a = run_example(ExperimentConfig("ex2d_2a"), tmp_path / "a")
        b = run_example(ExperimentConfig("ex2d_2b"), tmp_path / "b")
        assert b["product"]["mean"] < a["product"]["mean"]
        assert b["balancing"]["t"] == 16.0

    def test_manifest_closure(self, tmp_path):
        run_example(ExperimentConfig.from_dict(dict(example_id="ex2d_1", seed=11, **FAST)), tmp_path / "one")
        manifest = json.loads((tmp_path / "one" / "manifest.json").read_text())
        run_example(ExperimentConfig.from_dict(manifest), tmp_path / "two")
        assert read_bundle(tmp_path / "one") == read_bundle(tmp_path / "two")

    def test_worker_invariance(self, tmp_path):
        cfg = ExperimentConfig.from_dict(dict(example_id="ex2d_2a", seed=2, **FAST))
        run_example(cfg, tmp_path / "w1", workers=1)
        run_example(cfg, tmp_path / "w3", workers=3)
        assert read_bundle(tmp_path / "w1") == read_bundle(tmp_path / "w3")

    def test_report_is_strict_json(self, tmp_path):
        run_example(ExperimentConfig.from_dict(dict(example_id="ex1d_1", **FAST)), tmp_path)
        text = (tmp_path / "report.json").read_text()
        json.loads(text, parse_constant=lambda c: pytest.fail(f"non-standard constant {c}"))


class TestCli:
    def test_example_happy_path(self, tmp_path, capsys):
        cfg = write(tmp_path / "c.json", dict(example_id="ex1d_1", **FAST))
        assert main(["example", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
        assert all((tmp_path / "out" / name).is_file() for name in BUNDLE)
        assert "ex1d_1" in capsys.readouterr().out

    def test_shipped_config(self, tmp_path):
        code = main(["example", "--config", str(CONFIGS / "ex1d_1.json"), "--out", str(tmp_path),
                     "--trials", "100", "--horizon", "1000", "--quiet"])
        assert code == 0
        assert all((tmp_path / name).is_file() for name in BUNDLE)
        assert json.loads((tmp_path / "manifest.json").read_text())["trials"] == 100

    def test_missing_config(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.json")
        assert main(["margin", "--config", missing]) == 3
        assert missing in capsys.readouterr().err

    def test_margin_nonpositive_epsilon(self, tmp_path, capsys):
        cfg = write(tmp_path / "m.json", {"epsilon": 0.0,
                                          "noise": {"structure": "planar_example", "dim": 1, "rho": 4.0}})
        assert main(["margin", "--config", cfg, "--out", str(tmp_path)]) == 1
        assert "epsilon must be > 0" in capsys.readouterr().err

    def test_margin(self, tmp_path):
        cfg = write(tmp_path / "m.json", {"epsilon": 0.005,
                                          "noise": {"structure": "planar_example", "dim": 1, "rho": 4.0}})
        assert main(["margin", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        rep = json.loads((tmp_path / "margin.json").read_text())
        assert rep["taylor_margin"] == -0.005 and rep["verdict"] == "stabilizing"

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert main(["synth", "--config", str(p)]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_simulate(self, tmp_path):
        sys = MapSystem(np.diag([1.01, 0.5]), NoiseModel.planar(0.01, 5.0))
        cfg = write(tmp_path / "s.json", {"system": sys.to_dict(), "x0": [1e-3, 0.0], "horizon": 500,
                                          "retain_states": True})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--seed", "3", "--quiet"]) == 0
        data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
        assert data.shape[1] == 4 and data[0, 1] == 1e-3

    def test_lyapunov(self, tmp_path):
        cfg = write(tmp_path / "l.json", {"A": {"dim": 1, "rows": [[1.005]]},
                                          "noise": {"structure": "planar_example", "dim": 1,
                                                    "epsilon": 0.005, "rho": 4.0},
                                          "kind": "both", "samples": 10_000, "horizon": 1000})
        assert main(["lyapunov", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        rep = json.loads((tmp_path / "lyapunov.json").read_text())
        assert set(rep) == {"per_step_norm", "product_norm"}
        assert rep["per_step_norm"]["samples"] == 10_000

    def test_synth(self, tmp_path):
        cfg = write(tmp_path / "r.json", {"A": {"dim": 1, "rows": [[1.005]]}, "epsilon": 0.005,
                                          "rho": 4.0, "samples": 200_000})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        res = json.loads((tmp_path / "synthesis.json").read_text())
        assert res["result"]["certificate"]["verdict"] == "satisfied"
        assert res["result"]["model"]["gain"] == pytest.approx(math.sqrt(0.02), rel=1e-15)

    def test_synth_invalid_rho(self, tmp_path):
        cfg = write(tmp_path / "r.json", {"A": {"dim": 1, "rows": [[1.005]]}, "epsilon": 0.005, "rho": 2.0})
        assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 1

    def test_validate_noise(self, tmp_path):
        noise = {"structure": "diagonal_scalar", "dim": 2, "epsilon": 0.02, "gain": math.sqrt(0.08),
                 "gain_law": {"coef": 2.0, "exponent": 0.5}}
        cfg = write(tmp_path / "v.json", {"noise": noise, "eps_sequence": [0.02, 0.01, 0.005]})
        assert main(["validate-noise", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
        assert json.loads((tmp_path / "moments.json").read_text())["ok"] is True
