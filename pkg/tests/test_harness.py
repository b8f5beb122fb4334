import json
import pathlib

import numpy as np
import pytest

from dynwatermark.harness import (
    PARTIAL_BURN_IN,
    Trace,
    _oracle_distortion,
    _residual_streams,
    calibrate_detector,
    export_trace,
    import_trace,
    oracle_metrics,
    run_scenario,
    stat_series,
    trace_equal,
)
from dynwatermark.scenario import scenario_from_dict

from conftest import make_scenario

DATA = pathlib.Path(__file__).resolve().parent / "data"


def residual_streams_of(trace):
    cfg = trace.config
    return _residual_streams(cfg, cfg.plant.build(), {
        "x": trace.x, "y": trace.y, "z": trace.z, "u_g": trace.u_g,
        "u": trace.u, "e_raw": trace.e_raw, "e_shaped": trace.e_shaped,
        "w": trace.w, "n": trace.n,
    })


def golden_config():
    """Fixed config behind tests/data/golden_scalar_trace.csv.

    Regenerate the file with scripts/make_golden_trace.py if the trace
    format itself changes (bump the schema version when doing so).
    """
    return make_scenario(
        name="golden",
        seed=7,
        horizon=301,
        detector={"window_len": 100, "alpha": 0.05, "n_cal": 200,
                  "tests": ["variance_wm", "cross_corr"]},
    )


def all_class_configs(horizon=400):
    """One honest scenario per plant class, small enough for unit tests."""
    det = {"window_len": 100, "alpha": 0.01, "n_cal": 1000}
    return {
        "scalar": make_scenario(horizon=horizon, detector=det),
        "arx": make_scenario(
            horizon=horizon,
            plant={"kind": "arx", "a": [0.7, 0.2], "b": [1.0, 0.5], "sigma_w2": 1.0},
            policy={"kind": "arx_deadbeat"},
            watermark={"sigma_e2": 0.25, "shaper": "arx"},
            detector=det,
        ),
        "armax": make_scenario(
            horizon=horizon,
            plant={"kind": "armax", "a": [0.5], "b": [1.0, 0.5], "c": [1.0, 0.3],
                   "delay": 1, "sigma_w2": 1.0},
            policy={"kind": "zero"},
            watermark={"sigma_e2": 0.25, "shaper": "armax"},
            detector=det,
        ),
        "partial": make_scenario(
            horizon=horizon,
            plant={"kind": "partial", "A": [[0.9]], "B": [1.0], "C": [1.0],
                   "sigma_w2": 1.0, "sigma_n2": 1.0},
            policy={"kind": "zero"},
            detector={"window_len": 100, "alpha": 0.01, "n_cal": 1000,
                      "tests": ["cross_corr"]},
        ),
        "mimo": make_scenario(
            horizon=horizon,
            plant={"kind": "mimo", "A": [[0.5, 0.1], [0.0, 0.4]],
                   "B": [[1.0, 0.0], [0.0, 1.0]], "sigma_w2": 1.0},
            policy={"kind": "linear", "f": [[-0.2, 0.0], [0.0, -0.2]]},
            watermark={"sigma_e2": 0.5},
            detector=det,
        ),
    }


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_same_seed_reproduces_bit_exactly():
    cfg = make_scenario(horizon=500)
    t1 = run_scenario(cfg)
    t2 = run_scenario(cfg)
    assert trace_equal(t1, t2)


def test_seed_override_changes_realization():
    cfg = make_scenario(horizon=500)
    t1 = run_scenario(cfg, seed=1)
    t2 = run_scenario(cfg, seed=2)
    assert not trace_equal(t1, t2)
    assert not np.array_equal(t1.w, t2.w)


@pytest.mark.parametrize("kind", ["scalar", "arx", "armax", "partial", "mimo"])
def test_determinism_all_classes(kind):
    cfg = all_class_configs()[kind]
    assert trace_equal(run_scenario(cfg), run_scenario(cfg))


# ---------------------------------------------------------------------------
# ground-truth distortion on honest runs
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["scalar", "arx", "armax", "partial", "mimo"])
def test_honest_distortion_is_numerically_zero(kind):
    # the decomposition reproduces the simulator step-for-step, so an
    # honest run leaves only accumulation-order noise (<< 1e-10)
    cfg = all_class_configs()[kind]
    trace = run_scenario(cfg)
    v = _oracle_distortion(cfg, cfg.plant.build(), trace)
    assert float(np.max(np.abs(v))) <= 1e-10


def test_attacked_distortion_is_nonzero_and_post_onset_only():
    cfg = make_scenario(
        horizon=600, attack={"kind": "replay", "onset": 300, "record_len": 100}
    )
    trace = run_scenario(cfg)
    v = _oracle_distortion(cfg, cfg.plant.build(), trace)
    # v[k] covers the step k -> k+1; reports differ from t=onset on
    assert float(np.max(np.abs(v[: 300 - 1]))) <= 1e-12
    assert float(np.mean(v[300:] ** 2)) > 0.01


def test_scalar_report_error_follows_distortion_recursion():
    cfg = make_scenario(
        horizon=600, attack={"kind": "replay", "onset": 300, "record_len": 100}
    )
    trace = run_scenario(cfg)
    plant = cfg.plant.build()
    v = _oracle_distortion(cfg, plant, trace)
    d = trace.z - trace.x
    # d[k+1] = a d[k] + v[k+1-1] with d[0] = 0
    pred = np.empty_like(d)
    pred[0] = 0.0
    for k in range(d.shape[0] - 1):
        pred[k + 1] = plant.a * d[k] + v[k]
    np.testing.assert_allclose(d, pred, atol=1e-10)


# ---------------------------------------------------------------------------
# attack/real split of the timeline
# ---------------------------------------------------------------------------


def test_pre_onset_windows_match_honest_run():
    det = {"window_len": 100, "alpha": 0.01, "n_cal": 1000}
    honest = make_scenario(horizon=900, detector=det)
    attacked = make_scenario(
        horizon=900, detector=det,
        attack={"kind": "noise_sim", "onset": 450},
    )
    th = run_scenario(honest)
    ta = run_scenario(attacked)
    # identical RNG layout => identical plant noise, watermark, and pre-onset
    # reports, so every window that closes before the onset matches bit-exactly
    np.testing.assert_array_equal(th.z[:450], ta.z[:450])
    for wh, wa in zip(th.windows, ta.windows):
        if wa.end_t < 450:
            assert wh.values == wa.values


def test_run_report_counts_alarms_against_onset():
    cfg = make_scenario(
        horizon=2001,
        attack={"kind": "replay", "onset": 1000, "record_len": 500},
    )
    trace = run_scenario(cfg)
    rep = oracle_metrics(trace)
    assert rep.n_windows == 4
    assert rep.false_alarms_pre_onset == 0
    assert rep.first_alarm is not None and rep.first_alarm > 1000
    assert rep.detection_delay == rep.first_alarm - 1000


def test_honest_run_report_has_no_delay():
    rep = oracle_metrics(run_scenario(make_scenario(horizon=1001)))
    assert rep.onset is None
    assert rep.detection_delay is None
    assert rep.false_alarms_pre_onset == rep.n_alarms


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def test_calibration_matches_run_thresholds():
    cfg = make_scenario(horizon=600)
    th = calibrate_detector(cfg)
    trace = run_scenario(cfg)
    assert set(th) == set(trace.thresholds)
    for name in th:
        assert th[name].lo == trace.thresholds[name].lo
        assert th[name].hi == trace.thresholds[name].hi


def test_shared_thresholds_reused_across_seeds():
    cfg = make_scenario(horizon=600)
    th = calibrate_detector(cfg)
    t1 = run_scenario(cfg, seed=11, thresholds=th)
    t2 = run_scenario(cfg, seed=12, thresholds=th)
    assert t1.thresholds is th and t2.thresholds is th
    assert not trace_equal(t1, t2)


def test_incomplete_thresholds_rejected():
    cfg = make_scenario(horizon=600)
    th = calibrate_detector(cfg)
    th.pop("variance_wm")
    with pytest.raises(ValueError, match="variance_wm"):
        run_scenario(cfg, thresholds=th)


# ---------------------------------------------------------------------------
# residual whiteness under honest operation
# ---------------------------------------------------------------------------


def test_honest_watermark_residual_is_white():
    cfg = make_scenario(horizon=20001, detector={"window_len": 1000,
                                                 "alpha": 0.01, "n_cal": 1000})
    trace = run_scenario(cfg)
    r = residual_streams_of(trace)["r_wm"]
    r = r - r.mean()
    n = r.shape[0]
    denom = float(np.dot(r, r))
    for lag in range(1, 6):
        rho = float(np.dot(r[lag:], r[:-lag])) / denom
        assert abs(rho) < 4.0 / np.sqrt(n), f"lag {lag}: {rho}"


@pytest.mark.parametrize("kind", ["scalar", "arx", "armax", "partial", "mimo"])
def test_honest_report_power_equals_state_power(kind):
    # honest sensors forward the measurement unchanged, so the reported and
    # true output streams are the same object values
    trace = run_scenario(all_class_configs()[kind])
    ref = trace.y if kind == "partial" else trace.x
    assert np.array_equal(trace.z, ref)


def test_honest_window_means_track_noise_variance_across_seeds():
    from scipy.stats import chi2

    cfg = make_scenario(horizon=2001)
    th = calibrate_detector(cfg)
    n = 2000  # residual samples per run
    lo = chi2.ppf(0.025, n) / n
    hi = chi2.ppf(0.975, n) / n
    inside = 0
    for seed in range(20):
        r = residual_streams_of(run_scenario(cfg, seed=seed, thresholds=th))["r_wm"]
        inside += lo <= float(np.mean(r * r)) <= hi
    assert inside >= 19


# ---------------------------------------------------------------------------
# alarm-rate sanity over a small seed sweep
# ---------------------------------------------------------------------------


def test_seed_sweep_separates_honest_from_attacked():
    det = {"window_len": 250, "alpha": 0.01, "n_cal": 1000}
    honest = make_scenario(horizon=1501, detector=det)
    attacked = make_scenario(
        horizon=1501, detector=det,
        attack={"kind": "replay", "onset": 750, "record_len": 250},
    )
    th = calibrate_detector(honest)
    honest_alarms = 0
    detected = 0
    for seed in range(8):
        rep_h = oracle_metrics(run_scenario(honest, seed=seed, thresholds=th))
        rep_a = oracle_metrics(run_scenario(attacked, seed=seed, thresholds=th))
        honest_alarms += rep_h.n_alarms
        detected += rep_a.detection_delay is not None
    # 8 seeds x 6 windows x 4 channels at alpha=0.01: a couple of false
    # alarms are plausible, a pile of them is not
    assert honest_alarms <= 4
    assert detected >= 7


# ---------------------------------------------------------------------------
# series access and report serialization
# ---------------------------------------------------------------------------


def test_stat_series_matches_windows():
    trace = run_scenario(make_scenario(horizon=2001))
    ends, vals = stat_series(trace, "variance_wm")
    assert ends.tolist() == [wrec.end_t for wrec in trace.windows]
    assert vals.tolist() == [wrec.values["variance_wm"] for wrec in trace.windows]


def test_stat_series_unknown_channel():
    trace = run_scenario(make_scenario(horizon=2001))
    with pytest.raises(ValueError, match="no_such"):
        stat_series(trace, "no_such")


def test_run_report_json_roundtrip():
    rep = oracle_metrics(run_scenario(make_scenario(horizon=1001)))
    back = json.loads(rep.to_json())
    assert back == rep.to_dict()
    assert back["schema_version"] == 1
    assert back["plant_kind"] == "scalar"


# ---------------------------------------------------------------------------
# trace export / import
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["scalar", "arx", "armax", "partial", "mimo"])
def test_export_import_roundtrip_bit_exact(kind, tmp_path):
    cfg = all_class_configs()[kind]
    trace = run_scenario(cfg)
    path = tmp_path / "trace.csv"
    export_trace(trace, path)
    again = import_trace(path, cfg)
    assert trace_equal(trace, again)
    # and a second export of the imported trace is byte-identical
    path2 = tmp_path / "trace2.csv"
    export_trace(again, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_export_against_golden_file(tmp_path):
    golden = DATA / "golden_scalar_trace.csv"
    trace = run_scenario(golden_config())
    path = tmp_path / "trace.csv"
    export_trace(trace, path)
    assert path.read_bytes() == golden.read_bytes()


def test_import_golden_file():
    trace = import_trace(DATA / "golden_scalar_trace.csv", golden_config())
    assert trace.seed == 7
    assert trace.horizon == 301
    assert len(trace.windows) == 3
    assert trace_equal(trace, run_scenario(golden_config()))


def test_import_rejects_tampered_state(tmp_path):
    cfg = make_scenario(horizon=400)
    path = tmp_path / "trace.csv"
    export_trace(run_scenario(cfg), path)
    lines = path.read_text().splitlines()
    # corrupt one measurement mid-stream; the plant recursion must notice
    row = lines[200].split(",")
    row[1] = repr(float(row[1]) + 0.5)
    lines[200] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="self-check"):
        import_trace(path, cfg)


def test_export_empty_trace_is_header_only(tmp_path):
    cfg = make_scenario(horizon=400)
    zeros = np.empty(0)
    empty = Trace(
        config=cfg, seed=0,
        x=zeros, y=zeros, z=zeros, u_g=zeros, u=zeros,
        e_raw=zeros, e_shaped=zeros, w=zeros, n=None,
        windows=[], thresholds={}, residual_start=1, burn_in=0,
    )
    path = tmp_path / "empty.csv"
    export_trace(empty, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("# dynwatermark-trace ")
    assert lines[1].split(",")[:3] == ["t", "y", "z"]


def test_import_rejects_wrong_schema(tmp_path):
    cfg = make_scenario(horizon=400)
    path = tmp_path / "trace.csv"
    export_trace(run_scenario(cfg), path)
    text = path.read_text().replace("schema_version=1", "schema_version=9", 1)
    path.write_text(text)
    with pytest.raises(ValueError, match="schema"):
        import_trace(path, cfg)


def test_burn_in_partial_default():
    trace = run_scenario(all_class_configs()["partial"])
    assert trace.burn_in == PARTIAL_BURN_IN


def test_burn_in_armax_covers_lags():
    cfg = all_class_configs()["armax"]
    trace = run_scenario(cfg)
    # max(len(a), shaper length + delay, len(b)-1 feedback depth)
    assert trace.burn_in >= len(cfg.plant.c) + cfg.plant.delay - 1
    assert trace.residual_start == 0


def test_detector_burn_in_override():
    cfg = make_scenario(horizon=2001, detector={"window_len": 500, "alpha": 0.01,
                                                "n_cal": 1000, "burn_in": 300})
    trace = run_scenario(cfg)
    assert trace.burn_in == 300
    assert trace.windows[0].end_t == 300 + 500  # first window covers [801, 1300]
