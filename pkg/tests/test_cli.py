import json
import os

import numpy as np
import pytest

from fraclink import jsonio
from fraclink.cli import main
from fraclink.config import ConfigError, load_config, parse_config
from fraclink.driver import (EXIT_CONFIG, EXIT_NO_SOLUTION, EXIT_OK,
                             EXIT_VERIFY_FAILED)

INTERVAL_DOC = {
    "domain": {"kind": "interval", "side_lengths": [1.0]},
    "K_max": 24,
    "nonlinearity": {"kind": "power", "p": 3.0},
    "lambda": 0.0,
    "rng_seed": 42,
}

RECT_DOC = {
    "domain": {"kind": "rectangle", "side_lengths": [1.0, 1.0]},
    "K_max": 24,
    "nonlinearity": {"kind": "power", "p": 3.0},
    "rng_seed": 42,
}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run_cli(command, cfg_path, out_dir, *extra):
    return main([command, "--config", cfg_path, "--out", str(out_dir),
                 "--quiet", *extra])


class TestConfigValidation:
    def test_k_max_zero_is_config_error(self, tmp_path):
        doc = dict(INTERVAL_DOC, K_max=0)
        code = run_cli("eig", write_config(tmp_path, doc), tmp_path / "out")
        assert code == EXIT_CONFIG

    def test_p_equal_two_rejected(self, tmp_path):
        doc = dict(INTERVAL_DOC, nonlinearity={"kind": "power", "p": 2.0})
        code = run_cli("solve", write_config(tmp_path, doc), tmp_path / "out")
        assert code == EXIT_CONFIG

    def test_supercritical_p_rejected_2d(self):
        with pytest.raises(ConfigError, match="range"):
            parse_config(dict(RECT_DOC, nonlinearity={"kind": "power", "p": 4.0}))

    def test_interval_relaxes_range_with_warning(self):
        doc = dict(INTERVAL_DOC, nonlinearity={"kind": "power", "p": 5.0})
        with pytest.warns(RuntimeWarning, match="1-d"):
            cfg = parse_config(doc)
        assert cfg.nonlinearity.p == 5.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config(dict(INTERVAL_DOC, mystery=1))

    def test_eigen_index_bounds(self):
        doc = dict(RECT_DOC)
        doc["lambda_sweep"] = {"eigen_index": 30, "delta_list": [0.1]}
        with pytest.raises(ConfigError, match="K_max"):
            parse_config(doc)

    def test_multiplicity_requires_index_geq_2(self, tmp_path):
        doc = dict(RECT_DOC)
        doc["lambda_sweep"] = {"eigen_index": 1, "delta_list": [0.1]}
        code = run_cli("multiplicity", write_config(tmp_path, doc), tmp_path / "o")
        assert code == EXIT_CONFIG

    def test_solve_requires_lambda(self, tmp_path):
        doc = dict(RECT_DOC)  # no "lambda"
        code = run_cli("solve", write_config(tmp_path, doc), tmp_path / "o")
        assert code == EXIT_CONFIG

    def test_json_syntax_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "domain": [,]\n}')
        with pytest.raises(ConfigError, match="line 2"):
            load_config(str(path))

    def test_bad_solver_option(self):
        with pytest.raises(ConfigError, match="solver"):
            parse_config(dict(INTERVAL_DOC, solver={"residual_tol": -1.0}))

    def test_threads_validated(self, tmp_path):
        code = run_cli("eig", write_config(tmp_path, INTERVAL_DOC),
                       tmp_path / "o", "--threads", "0")
        assert code == EXIT_CONFIG


class TestEig:
    def test_rectangle_spectrum_csv(self, tmp_path):
        cfg = write_config(tmp_path, RECT_DOC)
        out = tmp_path / "out"
        assert run_cli("eig", cfg, out) == EXIT_OK
        lines = (out / "spectrum.csv").read_text().splitlines()
        assert lines[0] == "k,multi_index,lambda"
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "1x1"
        assert float(first[2]) == pytest.approx(4.442882938158366, rel=1e-15)
        assert float(lines[2].split(",")[2]) == pytest.approx(7.024814731040727,
                                                              rel=1e-15)
        report = json.loads((out / "report.json").read_text())
        assert report["schema"] == "fraclink/1"
        assert report["clusters"][1] == [2, 3]

    def test_rerun_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, RECT_DOC)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli("eig", cfg, out1) == EXIT_OK
        assert run_cli("eig", cfg, out2) == EXIT_OK
        for name in ("report.json", "spectrum.csv", "basis.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_basis_json_roundtrip(self, tmp_path):
        from fraclink import load_basis

        cfg = write_config(tmp_path, INTERVAL_DOC)
        out = tmp_path / "out"
        assert run_cli("eig", cfg, out) == EXIT_OK
        basis = load_basis(str(out / "basis.json"))
        assert basis.K_max == 24
        assert basis.lams[0] == pytest.approx(np.pi, rel=1e-15)


class TestSolve:
    def test_interval_mountain_pass_dispatch(self, tmp_path):
        cfg = write_config(tmp_path, INTERVAL_DOC)
        out = tmp_path / "out"
        assert run_cli("solve", cfg, out) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["dispatch"] == "mountain_pass"
        sols = json.loads((out / "solutions.json").read_text())
        nontrivial = [p for p in sols["points"] if p["h_norm"] > 1e-6]
        assert nontrivial
        assert all(p["residual"] < 1e-8 for p in sols["points"])

    def test_interval_linking_dispatch(self, tmp_path):
        doc = dict(INTERVAL_DOC)
        doc["lambda"] = 1.5 * np.pi
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "out"
        assert run_cli("solve", cfg, out) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["dispatch"] == "linking"
        assert report["n_nontrivial"] >= 1

    def test_no_solution_exit_code(self, tmp_path):
        doc = dict(INTERVAL_DOC, nonlinearity={"kind": "zero", "p": 3.0})
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "out"
        assert run_cli("solve", cfg, out) == EXIT_NO_SOLUTION
        sols = json.loads((out / "solutions.json").read_text())
        assert all(p["h_norm"] <= 1e-6 for p in sols["points"])


class TestVerify:
    def test_default_suite_passes(self, tmp_path):
        cfg = write_config(tmp_path, INTERVAL_DOC)
        out = tmp_path / "out"
        assert run_cli("verify", cfg, out) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["all_passed"]
        names = [c["name"] for c in report["checks"]]
        assert names == ["poincare", "gradient_fd", "hypotheses", "k_decay",
                         "sup_sweep"]
        assert (out / "sweep.csv").read_text().splitlines()[0] == \
            "lambda_gap,sup_value"

    def test_broken_nonlinearity_fails_row(self, tmp_path):
        doc = dict(INTERVAL_DOC, nonlinearity={"kind": "linear", "p": 3.0})
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "out"
        assert run_cli("verify", cfg, out) == EXIT_VERIFY_FAILED
        report = json.loads((out / "report.json").read_text())
        rows = {c["name"]: c for c in report["checks"]}
        assert not rows["hypotheses"]["passed"]
        assert not rows["hypotheses"]["detail"]["hypotheses"]["g5"]["passed"]

    def test_all_toggles_off_empty_report(self, tmp_path):
        doc = dict(INTERVAL_DOC)
        doc["verify"] = {k: False for k in
                         ("poincare", "gradient_fd", "hypotheses", "k_decay",
                          "sup_sweep")}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "out"
        assert run_cli("verify", cfg, out) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["checks"] == []

    def test_seed_override_changes_nothing_deterministic(self, tmp_path):
        cfg = write_config(tmp_path, INTERVAL_DOC)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli("verify", cfg, out1, "--seed", "7") == EXIT_OK
        assert run_cli("verify", cfg, out2, "--seed", "7") == EXIT_OK
        assert (out1 / "report.json").read_bytes() == \
            (out2 / "report.json").read_bytes()


class TestJsonIO:
    def test_float_17g(self):
        assert jsonio.format_float(np.pi) == "3.1415926535897931"

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            jsonio.dumps({"x": float("nan")})

    def test_nested_structures(self):
        text = jsonio.dumps({"a": [1, 2.5, "s", None, True], "b": {"c": []}})
        assert json.loads(text) == {"a": [1, 2.5, "s", None, True], "b": {"c": []}}
