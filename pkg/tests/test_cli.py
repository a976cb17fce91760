import json
import math

import numpy as np
import pytest

from mrbsde.cli import ConfigError, main, parse_config

A_LATTICE = {
    "scenario": "A_sine_constraint",
    "grid": {"n": 2},
    "backend": {"kind": "lattice"},
}


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    return header, rows


def test_solve_lattice_exact_reflection_column(tmp_path):
    cfg = write_config(tmp_path, A_LATTICE)
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    header, rows = read_csv(out / "results.csv")
    assert header == ["t", "mean_Y", "std_Y", "mean_Z_1", "K", "dK",
                      "constraint_value"]
    k_col = [float(r["K"]) for r in rows]
    assert np.allclose(k_col, [0.0, 0.0, 0.3], atol=1e-10)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"]
    assert abs(summary["flatness_residual"]) <= 1e-12
    assert summary["constants_report"]["shift_at_zero_max"] == pytest.approx(
        0.3, abs=1e-9)
    assert summary["scenario_hash"]


def test_solve_regression_reflection_close(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 16},
        "ensemble": {"N": 4000, "seed": 5, "antithetic": True},
        "backend": {"kind": "regression", "degree": 3},
    })
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    _, rows = read_csv(out / "results.csv")
    assert float(rows[-1]["K"]) == pytest.approx(0.3, abs=1e-2)


def test_invalid_mode_exits_3_without_files(tmp_path):
    cfg = write_config(tmp_path, {**A_LATTICE, "mode": "banana"})
    out = tmp_path / "nope"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 3
    assert not out.exists()


def test_unknown_config_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config({**A_LATTICE, "mystery": 1})
    with pytest.raises(ConfigError):
        parse_config({**A_LATTICE, "grid": {"n": 2, "zz": 3}})


def test_lattice_dimension_and_depth_guards():
    with pytest.raises(ConfigError, match="n <= 12"):
        parse_config({**A_LATTICE, "grid": {"n": 30}})
    with pytest.raises(ConfigError, match="even N"):
        parse_config({"scenario": "A_sine_constraint", "grid": {"n": 4},
                      "ensemble": {"N": 101, "antithetic": True}})


def test_missing_config_file():
    assert main(["solve", "--config", "/does/not/exist.json",
                 "--out", "/tmp/x"]) == 3


def test_verify_passes_and_reports_warning(tmp_path, capsys):
    # scenario B runs beyond its contraction horizon: advisory warning, no failure
    cfg = write_config(tmp_path, {
        "scenario": "B_meanfield_linear",
        "grid": {"n": 8},
        "backend": {"kind": "lattice"},
    })
    assert main(["verify", "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"]
    assert any("contraction horizon" in w for w in report["warnings"])
    names = [c["name"] for c in report["checks"]]
    assert names == ["constraint_profile", "flatness", "k_monotone",
                     "contraction_ratio", "hl_probe", "assumptions"]


def test_verify_negative_control_fails_flatness(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 8},
        "backend": {"kind": "lattice"},
        "tolerances": {"flatness": 1e-3},
        "debug": {"inflate_k": 0.05},
    })
    assert main(["verify", "--config", cfg]) == 1
    report = json.loads(capsys.readouterr().out)
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert failed == ["flatness"]


def test_verify_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path, A_LATTICE)
    out = tmp_path / "rep"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    assert (out / "verify_report.json").exists()


def test_constants_command(capsys):
    assert main(["constants", "--C", "1", "--L", "1", "--lambda", "1",
                 "--alpha", "0", "--T", "1"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["delta_lipschitz"] == pytest.approx(1.0 / 1920.0, rel=1e-12)
    assert report["ball_floor"] == pytest.approx(7.0 + 8.0 * math.exp(9.0),
                                                 rel=1e-12)
    assert "delta_contraction_literal" in report
    assert "delta_contraction_reciprocal" in report
    assert report["y_bound"] is not None


def test_constants_rejects_bad_input(capsys):
    assert main(["constants", "--C", "1", "--L", "1", "--lambda", "-2"]) == 3


def test_compare_oracle_command(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 8},
        "ensemble": {"N": 8000, "seed": 3, "antithetic": True},
    })
    out = tmp_path / "cmp"
    assert main(["compare-oracle", "--config", cfg, "--steps", "8",
                 "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["lattice"]["within"] and report["regression"]["within"]
    assert (out / "comparison.csv").exists()


def test_outputs_byte_identical_across_runs(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 8},
        "ensemble": {"N": 2000, "seed": 9, "antithetic": True},
        "backend": {"kind": "regression", "degree": 3},
    })
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["solve", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["solve", "--config", cfg, "--out", str(out2)]) == 0
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    s1 = json.loads((out1 / "summary.json").read_text())
    s2 = json.loads((out2 / "summary.json").read_text())
    # wall-clock timing is the single non-reproducible field
    s1.pop("runtime_ms"), s2.pop("runtime_ms")
    assert s1 == s2


def test_nonconvergence_exits_2_without_files(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": {
            "name": "runaway", "T": 1.0, "d": 1,
            "terminal": {"kind": "brownian_shift", "params": {"c": 1.0}},
            "driver": {"kind": "linear_mean", "params": {"a": 6.0}},
            "resistance": {"kind": "zero"},
            "loss": {"kind": "linear_shift", "params": {}},
        },
        "grid": {"n": 12},
        "backend": {"kind": "lattice"},
        "picard": {"max_iter": 4},
    })
    out = tmp_path / "never"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()


def test_compare_oracle_budget_violation_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 8},
        "ensemble": {"N": 2000, "seed": 3, "antithetic": False},
        "compare": {"mc_budget": 1e-18},
    })
    assert main(["compare-oracle", "--config", cfg, "--steps", "8"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert not report["regression"]["within"]
    assert report["lattice"]["within"]


def test_grid_horizon_override(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "B_meanfield_linear",
        "grid": {"n": 8, "T": 0.25},
        "backend": {"kind": "lattice"},
    })
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    _, rows = read_csv(out / "results.csv")
    assert float(rows[-1]["t"]) == 0.25
    # discrete mean recursion on the shortened horizon
    assert float(rows[0]["mean_Y"]) == pytest.approx(
        (1.0 - 0.5 * 0.25 / 8) ** -8, abs=1e-6)


def test_backend_override_flag(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "A_sine_constraint",
        "grid": {"n": 8},
        "ensemble": {"N": 2000, "seed": 2, "antithetic": True},
        "backend": {"kind": "regression"},
    })
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out),
                 "--backend", "lattice"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["resolved_config"]["backend"]["kind"] == "lattice"
    assert main(["solve", "--config", write_config(tmp_path, {
        "scenario": "A_sine_constraint", "grid": {"n": 64}}, "big.json"),
        "--out", str(tmp_path / "x"), "--backend", "lattice"]) == 3


def test_stitched_solve_through_cli(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "B_meanfield_linear",
        "grid": {"n": 16},
        "ensemble": {"N": 2000, "seed": 4, "antithetic": True},
        "backend": {"kind": "regression", "degree": 2},
        "stitch": {"intervals": 2},
    })
    out = tmp_path / "out"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["stitch"]["breaks"] == [0, 8, 16]
    assert summary["stitch"]["seam_gaps"] == [0.0]
