#!/usr/bin/env python3
"""Regenerate tests/data/golden_scalar_trace.csv.

Only needed when the trace format itself changes; bump TRACE_SCHEMA_VERSION
and rerun this, then eyeball the diff before committing.
"""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "tests"))

from test_harness import golden_config  # noqa: E402

from dynwatermark.harness import export_trace, run_scenario  # noqa: E402

out = pathlib.Path(__file__).resolve().parent.parent / "tests" / "data"
out.mkdir(exist_ok=True)
path = out / "golden_scalar_trace.csv"
export_trace(run_scenario(golden_config()), path)
print(f"wrote {path}")
