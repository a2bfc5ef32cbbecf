import json

import numpy as np
import pytest

from jumpflux.cli import main
from jumpflux.config import (
    apply_overrides,
    build_config,
    default_config,
    default_config_dict,
    load_config,
)
from jumpflux.errors import SimulationConfigError
from conftest import config_dict_with


class TestConfigValidation:
    def test_minimal_scalar_config_loads(self, scalar_config):
        assert scalar_config.system.dim == 1
        assert scalar_config.regime.delta_of(0.1) == pytest.approx(0.1)

    def test_default_config_valid(self):
        cfg = default_config()
        assert cfg.system.dim == 2
        assert cfg.paths_per_point == 2000
        # A differs from A - BK, so sampling matters in the shipped setup
        assert np.abs(cfg.system.feedback).max() > 0

    def test_atom_outside_ball(self):
        raw = default_config_dict()
        raw["levy"]["atoms"][0]["location"] = [1.2, 0.5]
        with pytest.raises(SimulationConfigError, match="punctured unit ball"):
            build_config(raw)

    def test_epsilon_zero_condition(self):
        raw = default_config_dict()
        c = raw["regime"]["c"]
        raw["regime"]["delta_coeff"] = 2.0 * (c + 1.0)
        with pytest.raises(SimulationConfigError, match="epsilon-zero condition"):
            build_config(raw)

    def test_missing_field_named(self):
        raw = default_config_dict()
        del raw["system"]["K"]
        with pytest.raises(SimulationConfigError, match="system.K"):
            build_config(raw)

    def test_dimension_mismatch_named(self):
        raw = default_config_dict()
        raw["system"]["B"] = [[1.0], [0.0]]
        with pytest.raises(SimulationConfigError, match="K"):
            build_config(raw)

    def test_single_path_rejected(self):
        raw = config_dict_with(paths_per_point=1)
        with pytest.raises(SimulationConfigError, match="confidence interval"):
            build_config(raw)

    def test_unknown_measure_kind(self):
        raw = default_config_dict()
        raw["levy"] = {"kind": "alpha-stable", "alpha": 1.5}
        with pytest.raises(SimulationConfigError, match="finite-activity"):
            build_config(raw)

    def test_internal_step_guard(self):
        raw = config_dict_with(internal_step=0.01)
        with pytest.raises(SimulationConfigError, match="delta/20"):
            build_config(raw)

    def test_round_trip_preserves_checksum(self):
        cfg = default_config()
        again = build_config(cfg.to_dict())
        assert cfg.checksum() == again.checksum()

    def test_load_config_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(default_config_dict()))
        cfg = load_config(path)
        assert cfg.horizon == 1.0

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(SimulationConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_apply_overrides_dotted(self):
        raw = apply_overrides(default_config_dict(), ["regime.c=0.5", "horizon=2.0"])
        assert raw["regime"]["c"] == 0.5
        assert raw["horizon"] == 2.0


def run_cli(args):
    return main(args)


class TestCli:
    def test_simulate_reproducible_byte_for_byte(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(["simulate", "--out", str(a)]) == 0
        assert run_cli(["simulate", "--out", str(b)]) == 0
        assert (a / "bundle.csv").read_bytes() == (b / "bundle.csv").read_bytes()
        assert (a / "bundle.meta.json").read_bytes() == (
            b / "bundle.meta.json"
        ).read_bytes()

    def test_manifest_checksums_match_files(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(["simulate", "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        import hashlib

        for entry in manifest["outputs"]:
            digest = hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest()
            assert digest == entry["sha256"]

    def test_lln_outputs_consistent(self, tmp_path):
        out = tmp_path / "lln"
        code = run_cli(
            ["lln", "--paths", "50", "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "rate_report.json").read_text())
        rows = (out / "points.csv").read_text().splitlines()
        assert rows[0] == "epsilon,delta,kappa,paths,moment,ci_half_width"
        assert len(rows) == 1 + len(report["points"])
        plot = (out / "plot.csv").read_text().splitlines()
        assert plot[0] == "log10_epsilon,log10_moment,fitted_log10_moment"
        for line, pt in zip(plot[1:], report["points"]):
            x, y, fit = map(float, line.split(","))
            assert abs(x - np.log10(pt["epsilon"])) < 1e-12
            assert abs(y - np.log10(pt["moment"])) < 1e-12
            assert abs(fit - (report["slope"] * x + report["intercept"])) < 1e-12

    def test_clt_requires_limit_regime(self, tmp_path):
        out = tmp_path / "r3"
        raw = config_dict_with(
            regime={"regime": "R3-diagnostic", "epsilons": [0.2, 0.1], "p": 0.5}
        )
        cfg_path = tmp_path / "r3.json"
        cfg_path.write_text(json.dumps(raw))
        code = run_cli(
            ["clt", "--config", str(cfg_path), "--paths", "4", "--out", str(out)]
        )
        assert code == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "error"
        assert "R3" in manifest["error"]

    def test_bad_config_exit_code(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        raw = default_config_dict()
        raw["paths_per_point"] = 1
        cfg_path.write_text(json.dumps(raw))
        assert run_cli(["lln", "--config", str(cfg_path)]) == 2

    def test_set_overrides_flow_into_run(self, tmp_path):
        out = tmp_path / "clt"
        code = run_cli(
            [
                "clt",
                "--set",
                "regime.c=0.5",
                "--paths",
                "40",
                "--seed",
                "5",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        report = json.loads((out / "rate_report.json").read_text())
        pts = report["points"]
        assert pts[0]["delta"] == pytest.approx(0.5 * pts[0]["epsilon"])
        assert (out / "remainder.csv").exists()

    def test_selfcheck_default_config_exit_zero(self, tmp_path):
        out = tmp_path / "check"
        assert run_cli(["selfcheck", "--out", str(out)]) == 0
        results = json.loads((out / "selfcheck.json").read_text())
        assert results and all(entry["passed"] for entry in results)

    def test_mterms_run(self, tmp_path):
        out = tmp_path / "mt"
        code = run_cli(
            ["mterms", "--set", "regime.c=0.5", "--paths", "6", "--out", str(out)]
        )
        assert code == 0
        rows = (out / "mterms.csv").read_text().splitlines()
        assert rows[0].startswith("epsilon,delta,kappa,paths,")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["verdicts"]["mterms_residual"] is True
