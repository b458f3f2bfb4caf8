"""CLI harness: config handling, report round-trips, exit codes, moments."""

import json

import numpy as np
import pytest

from sens2.cli import ConfigError, RunConfig, config_from_dict, load_config, main, run
from sens2.report import SensitivityReport, propagate_moments, validate_covariance

CUBIC_HESSIAN = np.array([[1 / 32, 1 / 32], [1 / 32, -3 / 32]])


def _write_config(tmp_path, **overrides):
    cfg = {"model": "cubic", "method": "adjoint2"}
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_run_cubic_adjoint_report_values(tmp_path):
    out = tmp_path / "report.json"
    config = load_config(_write_config(tmp_path, out=str(out)))
    report = run(config)
    assert report.gradient == pytest.approx([-0.25, 0.25], abs=1e-12)
    assert np.max(np.abs(np.array(report.hessian_raw) - CUBIC_HESSIAN)) <= 1e-12
    assert report.symmetry_residual <= 1e-12
    assert out.exists()
    loaded = SensitivityReport.from_json(out.read_text())
    assert loaded.to_json() == report.to_json()  # lossless round-trip


def test_report_determinism(tmp_path):
    config = load_config(_write_config(tmp_path, model="heat", n_cells=20))
    first = run(config).to_json()
    second = run(config).to_json()
    assert first == second


def test_method_all_comparison_table(tmp_path):
    config = load_config(_write_config(tmp_path, model="linear_state", method="all"))
    report = run(config)
    assert report.comparisons is not None
    assert len(report.comparisons) == 5
    for row in report.comparisons:
        assert row["passed"], row


def test_method_fd_ledger(tmp_path):
    config = load_config(_write_config(tmp_path, model="heat", n_cells=15, method="fd"))
    report = run(config)
    extra = report.ledger["nonlinear_solves"].get("fd_oracle", 0)
    assert extra == 14  # (4^2 + 3*4)/2
    assert report.method == "fd"


def test_method_forward2(tmp_path):
    config = load_config(_write_config(tmp_path, method="forward2"))
    report = run(config)
    assert np.max(np.abs(np.array(report.hessian_raw) - CUBIC_HESSIAN)) <= 1e-10
    # one tangent pair per parameter
    assert report.ledger["linear_solves_J"]["second_lfss"] == 2
    assert report.ledger["linear_solves_JT"]["second_lfss"] == 2


def test_exit_code_ok(tmp_path, capsys):
    code = main(["run", "--config", _write_config(tmp_path)])
    assert code == 0
    assert '"gradient"' in capsys.readouterr().out


def test_exit_code_config_error_unknown_model(tmp_path, capsys):
    code = main(["run", "--config", _write_config(tmp_path, model="nope")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_config_error_bad_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code = main(["run", "--config", str(path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "line" in err


def test_exit_code_config_error_bad_field(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"model": "cubic", "bogus": 1})
    with pytest.raises(ConfigError):
        config_from_dict({"model": "cubic", "method": "sideways"})
    with pytest.raises(ConfigError):
        config_from_dict({"model": "cubic", "newton": {"abs_tol": -1.0}})


def test_exit_code_solver_error(tmp_path, capsys):
    # past the Bratu fold: genuine nonconvergence surfaces as exit 3
    path = _write_config(tmp_path, model="bratu", n_cells=15, params=[10.0, 20.0])
    with np.errstate(over="ignore"):
        code = main(["run", "--config", path])
    assert code == 3
    assert "solver error" in capsys.readouterr().err


def test_exit_code_param_length_mismatch(tmp_path, capsys):
    code = main(["run", "--config", _write_config(tmp_path, params=[1.0])])
    assert code == 2


def test_csv_dump(tmp_path):
    out = tmp_path / "h.csv"
    config = load_config(_write_config(tmp_path, csv=str(out)))
    run(config)
    rows = np.loadtxt(out, delimiter=",")
    assert np.max(np.abs(rows - CUBIC_HESSIAN)) <= 1e-12


def test_check_subcommand(capsys):
    code = main(["check", "--model", "cubic"])
    assert code == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out
    assert "detects_corrupt_residual_hess_contract_ua" in out


def test_bench_subcommand(capsys):
    code = main(["bench", "--model", "heat", "--sizes", "10,20"])
    assert code == 0
    out = capsys.readouterr().out
    assert "fd extra" in out
    assert out.count("ok") >= 2


def test_moments_in_report(tmp_path):
    sigma = (1e-4 * np.eye(2)).tolist()
    config = load_config(_write_config(tmp_path, covariance=sigma))
    report = run(config)
    assert report.moments is not None
    grad = np.array(report.gradient)
    expected_var = float(grad @ (1e-4 * np.eye(2)) @ grad)
    assert report.moments["variance"] == pytest.approx(expected_var, rel=1e-3)


def test_moments_zero_covariance():
    mean_shift, variance = propagate_moments(
        np.array([1.0, 2.0]), np.eye(2), np.zeros((2, 2))
    )
    assert mean_shift == 0.0 and variance == 0.0


def test_moments_zero_hessian_reduces_to_first_order():
    sigma = np.diag([0.04, 0.01])
    grad = np.array([3.0, -1.0])
    mean_shift, variance = propagate_moments(grad, np.zeros((2, 2)), sigma)
    assert mean_shift == 0.0
    assert variance == pytest.approx(float(grad @ sigma @ grad))


def test_non_psd_covariance_rejected(tmp_path, capsys):
    with pytest.raises(ValueError):
        validate_covariance(np.array([[1.0, 2.0], [2.0, 1.0]]), 2)  # eigenvalue -1
    with pytest.raises(ValueError):
        validate_covariance(np.array([[1.0, 0.5], [0.0, 1.0]]), 2)  # asymmetric
    code = main(
        ["run", "--config", _write_config(tmp_path, covariance=[[1.0, 2.0], [2.0, 1.0]])]
    )
    assert code == 2


def test_run_config_defaults():
    config = RunConfig(model="cubic")
    assert config.method == "adjoint2"
    assert config.newton.abs_tol == 1e-12
