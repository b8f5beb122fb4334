import json

import pytest
import yaml

from dynwatermark.cli import main
from dynwatermark.scenario import save_scenario, scenario_from_dict

from conftest import make_scenario


@pytest.fixture
def scenario_file(tmp_path):
    cfg = make_scenario(
        name="cli",
        horizon=2001,
        attack={"kind": "replay", "onset": 1000, "record_len": 500},
    )
    path = tmp_path / "scenario.yaml"
    save_scenario(cfg, path)
    return path


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_validate_ok(scenario_file, capsys):
    code, out, err = run_cli(capsys, "validate", "--scenario", str(scenario_file))
    assert code == 0
    assert out.strip() == "ok"
    assert err == ""


def test_validate_bad_scenario_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"schema_version": 1, "name": "x"}))
    code, out, err = run_cli(capsys, "validate", "--scenario", str(bad))
    assert code == 1
    assert err.startswith("error:")


def test_missing_file_exits_1(tmp_path, capsys):
    code, _, err = run_cli(capsys, "validate", "--scenario", str(tmp_path / "no.yaml"))
    assert code == 1
    assert "error:" in err


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run"])  # missing --scenario
    assert exc.value.code == 2


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_run_writes_run_directory(scenario_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = run_cli(
        capsys, "run", "--scenario", str(scenario_file), "--out", str(out_dir)
    )
    assert code == 0
    for name in ("trace.csv", "scenario.yaml", "report.json", "thresholds.json"):
        assert (out_dir / name).is_file(), name
    # stdout: one status line, then the report as JSON
    report = json.loads("\n".join(out.splitlines()[1:]))
    assert report == json.loads((out_dir / "report.json").read_text())
    assert report["attack_kind"] == "replay"
    assert report["n_windows"] == 4


def test_run_seed_override_lands_in_directory(scenario_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = run_cli(
        capsys, "run", "--scenario", str(scenario_file),
        "--seed", "42", "--out", str(out_dir),
    )
    assert code == 0
    assert json.loads("\n".join(out.splitlines()[1:]))["seed"] == 42


def test_out_env_var_fallback(scenario_file, tmp_path, capsys, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("DYNWATERMARK_OUT", str(target))
    code, _, _ = run_cli(capsys, "run", "--scenario", str(scenario_file))
    assert code == 0
    assert (target / "trace.csv").is_file()


def test_calibrate_prints_threshold_json(scenario_file, capsys):
    code, out, _ = run_cli(capsys, "calibrate", "--scenario", str(scenario_file))
    assert code == 0
    th = json.loads(out)
    assert set(th) == {"variance_wm", "variance_raw", "cross_corr", "nll"}
    for entry in th.values():
        assert set(entry) >= {"alpha", "hi", "lo", "method"}
        assert entry["alpha"] == 0.01


def test_detect_agrees_with_run(scenario_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    run_cli(capsys, "run", "--scenario", str(scenario_file), "--out", str(out_dir))
    code, out, _ = run_cli(
        capsys, "detect",
        "--trace", str(out_dir / "trace.csv"),
        "--scenario", str(scenario_file),
    )
    assert code == 0
    detection = json.loads(out)
    report = json.loads((out_dir / "report.json").read_text())
    assert detection["n_windows"] == report["n_windows"]
    assert detection["n_alarms"] == report["n_alarms"]
    assert detection["first_alarm"] == report["first_alarm"]
    assert all(a["end_t"] > 1000 for a in detection["alarms"])


def test_report_rewrites_summary_and_stats(scenario_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    run_cli(capsys, "run", "--scenario", str(scenario_file), "--out", str(out_dir))
    original = (out_dir / "report.json").read_text()
    (out_dir / "report.json").unlink()
    code, out, _ = run_cli(capsys, "report", "--run", str(out_dir))
    assert code == 0
    assert (out_dir / "report.json").read_text() == original
    assert json.loads(out) == json.loads(original)
    stats = (out_dir / "stats.csv").read_text().splitlines()
    header = stats[0].split(",")
    assert header[0] == "end_t"
    channels = {"variance_wm", "variance_raw", "cross_corr", "nll"}
    expected = channels | {f"{c}_hi" for c in channels} | {f"{c}_lo" for c in channels}
    assert set(header[1:]) == expected
    assert len(stats) == 1 + json.loads(original)["n_windows"]
    # threshold columns repeat the calibrated band on every row
    th = json.loads((out_dir / "thresholds.json").read_text())
    row = dict(zip(header, stats[1].split(",")))
    assert float(row["nll_hi"]) == th["nll"]["hi"]
    assert row["nll_lo"] == ""  # one-sided statistic
    assert float(row["variance_wm_lo"]) == th["variance_wm"]["lo"]


def test_report_recalibrates_when_thresholds_file_missing(scenario_file, tmp_path,
                                                          capsys):
    out_dir = tmp_path / "out"
    run_cli(capsys, "run", "--scenario", str(scenario_file), "--out", str(out_dir))
    stored = json.loads((out_dir / "thresholds.json").read_text())
    (out_dir / "thresholds.json").unlink()
    code, _, _ = run_cli(capsys, "report", "--run", str(out_dir))
    assert code == 0
    stats = (out_dir / "stats.csv").read_text().splitlines()
    row = dict(zip(stats[0].split(","), stats[1].split(",")))
    assert float(row["nll_hi"]) == stored["nll"]["hi"]


def test_calibrate_alpha_and_ncal_overrides(scenario_file, capsys):
    code, out, _ = run_cli(
        capsys, "calibrate", "--scenario", str(scenario_file),
        "--alpha", "0.05", "--ncal", "400",
    )
    assert code == 0
    th = json.loads(out)
    assert all(entry["alpha"] == 0.05 for entry in th.values())
    # overrides are revalidated as a pair
    code, _, err = run_cli(
        capsys, "calibrate", "--scenario", str(scenario_file),
        "--alpha", "0.001", "--ncal", "400",
    )
    assert code == 1
    assert "n_cal" in err


def test_validate_names_bad_polynomial(tmp_path, capsys):
    # the root of b sits inside the unit circle; write the file by hand since
    # scenario_from_dict would refuse to construct the config
    bad = {
        "schema_version": 1, "name": "x", "seed": 0, "horizon": 2000,
        "plant": {"kind": "arx", "a": [0.5], "b": [1.0, 2.0], "sigma_w2": 1.0},
        "policy": {"kind": "zero"},
        "watermark": {"sigma_e2": 1.0},
        "detector": {"window_len": 100, "alpha": 0.01, "n_cal": 1000},
    }
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    code, _, err = run_cli(capsys, "validate", "--scenario", str(path))
    assert code == 1
    assert "b_coeffs" in err and "minimum phase" in err


def test_report_rejects_non_run_directory(tmp_path, capsys):
    code, _, err = run_cli(capsys, "report", "--run", str(tmp_path))
    assert code == 1
    assert "not a run directory" in err


def test_detect_rejects_mismatched_scenario(scenario_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    run_cli(capsys, "run", "--scenario", str(scenario_file), "--out", str(out_dir))
    other = scenario_from_dict(
        make_scenario(name="other", horizon=1001).to_dict()
    )
    other_path = tmp_path / "other.yaml"
    save_scenario(other, other_path)
    code, _, err = run_cli(
        capsys, "detect",
        "--trace", str(out_dir / "trace.csv"),
        "--scenario", str(other_path),
    )
    assert code == 1
    assert "error:" in err
