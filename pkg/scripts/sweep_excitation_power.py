#!/usr/bin/env python3
"""Detection delay vs. excitation power for the replay attack.

Sweeps sigma_e2 on the scalar baseline loop.  For each level: one honest run
measures the state-power cost of the watermark, then N seeded replay runs
measure detection rate, mean delay, and pre-onset false alarms.  sigma_e2=0
is the blind baseline — every statistic stays in band because there is
nothing for the replayed recording to decorrelate from.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from dynwatermark.harness import calibrate_detector, oracle_metrics, run_scenario
from dynwatermark.scenario import scenario_from_dict

GRID = [0.0, 0.01, 0.03, 0.0625, 0.125, 0.25, 0.5, 1.0]


def make_config(sigma_e2, attack):
    return scenario_from_dict({
        "schema_version": 1,
        "name": f"sweep-se2-{sigma_e2}",
        "seed": 0,
        "horizon": 4001,
        "plant": {"kind": "scalar", "a": 0.5, "b": 1.0, "sigma_w2": 1.0},
        "policy": {"kind": "linear", "f": -0.3},
        "watermark": {"sigma_e2": sigma_e2},
        "attack": attack,
        "detector": {"window_len": 500, "alpha": 0.01, "n_cal": 2000},
    })


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args(argv)

    onset = 2000
    rows = []
    for se2 in GRID:
        honest = make_config(se2, {"kind": "honest"})
        attacked = make_config(
            se2, {"kind": "replay", "onset": onset, "record_len": 500}
        )
        thresholds = calibrate_detector(honest)
        ms_x = oracle_metrics(run_scenario(honest, thresholds=thresholds)
                              ).mean_square_state
        delays, detected, false_alarms = [], 0, 0
        for seed in range(args.seeds):
            rep = oracle_metrics(
                run_scenario(attacked, seed=seed, thresholds=thresholds)
            )
            false_alarms += rep.false_alarms_pre_onset
            if rep.detection_delay is not None:
                detected += 1
                delays.append(rep.detection_delay)
        rows.append({
            "sigma_e2": se2,
            "ms_x": ms_x,
            "detect_rate": detected / args.seeds,
            "mean_delay": float(np.mean(delays)) if delays else float("nan"),
            "false_alarms_per_run": false_alarms / args.seeds,
        })

    header = f"{'sigma_e2':>9} {'ms_x':>8} {'detect':>7} {'delay':>8} {'fa/run':>7}"
    print(header)
    for r in rows:
        print(f"{r['sigma_e2']:>9.4f} {r['ms_x']:>8.4f} "
              f"{r['detect_rate']:>7.2f} {r['mean_delay']:>8.1f} "
              f"{r['false_alarms_per_run']:>7.2f}")

    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys = list(rows[0])
        lines = [",".join(keys)]
        lines += [",".join(repr(r[k]) for k in keys) for r in rows]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"csv written to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
