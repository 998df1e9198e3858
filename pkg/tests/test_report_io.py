import json

import numpy as np
import pandas as pd

from src.report_io import SCHEMA_VERSION, to_jsonable, write_csv, write_json


def test_csv_uses_full_precision_and_lf(tmp_path):
    path = write_csv(pd.DataFrame({"r": [0.1, 2.0], "h": [1.0 / 3.0, -5e-20]}), str(tmp_path / "t.csv"))
    with open(path, "rb") as f:
        raw = f.read()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "r,h"
    assert lines[1] == "0.10000000000000001,0.33333333333333331"
    assert float(lines[2].split(",")[1]) == -5e-20


def test_plot_sidecar_accompanies_csv(tmp_path):
    write_csv(pd.DataFrame({"r": [1.0], "abs_ratio": [1.0]}), str(tmp_path / "ray.csv"),
              plot={"x_column": "r", "y_columns": ["abs_ratio"], "log_y": True})
    script = (tmp_path / "plot_ray.py").read_text(encoding="utf-8")
    assert 'pd.read_csv("ray.csv")' in script
    assert "set_yscale" in script
    compile(script, "plot_ray.py", "exec")


def test_json_report_is_versioned(tmp_path):
    write_json({"value": 1 + 2j, "nan": float("nan"), "count": np.int64(3), "ok": np.bool_(True),
                "grid": np.array([0.5, 1.5])}, str(tmp_path / "report.json"))
    with open(tmp_path / "report.json", encoding="utf-8") as f:
        data = json.load(f)
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["value"] == {"re": 1.0, "im": 2.0}
    assert data["nan"] == "nan"
    assert data["count"] == 3 and data["ok"] is True
    assert data["grid"] == [0.5, 1.5]


def test_jsonable_nested_values():
    assert to_jsonable({1: (np.float64(2.0), [np.complex128(1j)])}) == {"1": [2.0, [{"re": 0.0, "im": 1.0}]]}
