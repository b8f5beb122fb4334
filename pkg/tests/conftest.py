import sys

import numpy as np
import pytest

from dynwatermark.scenario import scenario_from_dict


def make_scenario(**overrides):
    """Scalar baseline scenario dict; override any top-level section."""
    base = {
        "schema_version": 1,
        "name": "test",
        "seed": 1,
        "horizon": 2001,
        "plant": {"kind": "scalar", "a": 0.5, "b": 1.0, "sigma_w2": 1.0},
        "policy": {"kind": "linear", "f": -0.3},
        "watermark": {"sigma_e2": 0.25},
        "attack": {"kind": "honest"},
        "detector": {"window_len": 500, "alpha": 0.01, "n_cal": 2000},
    }
    base.update(overrides)
    return scenario_from_dict(base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance-criterion verdict lines collected during the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
