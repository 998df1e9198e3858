"""
Escritura de artefactos: CSV con 17 cifras significativas, reporte JSON
versionado y scripts de gráficos que acompañan a cada CSV (no se ejecutan).
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

# Configuración de formatos de salida
OUTPUT_CONFIG = {
    "float_format": "%.17g",
    "lineterminator": "\n",
    "plot_sidecars": True,
}

_PLOT_TEMPLATE = '''#!/usr/bin/env python3
"""Gráfico de {name} (generado junto a {csv})"""
import matplotlib.pyplot as plt
import pandas as pd

data = pd.read_csv("{csv}")
fig, ax = plt.subplots()
for column in {y_columns!r}:
    ax.plot(data["{x_column}"], data[column], ".-", label=column)
ax.set_xlabel("{x_column}")
{log_line}ax.legend()
ax.set_title("{name}")
fig.savefig("{name}.png", dpi=150)
'''


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else repr(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(np.real(value)), "im": float(np.imag(value))}
    return value


def write_csv(frame: pd.DataFrame, path: str, plot: Optional[Dict[str, Any]] = None) -> str:
    """CSV determinista: '.' decimal, LF, 17 dígitos; opcionalmente con script de gráfico"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format=OUTPUT_CONFIG["float_format"],
                 lineterminator=OUTPUT_CONFIG["lineterminator"])
    logger.info(f"CSV escrito: {path} ({len(frame)} filas)")
    if plot and OUTPUT_CONFIG["plot_sidecars"]:
        write_plot_sidecar(path, **plot)
    return path


def write_plot_sidecar(csv_path: str, x_column: str, y_columns: List[str], log_y: bool = False) -> str:
    directory, filename = os.path.split(csv_path)
    name = os.path.splitext(filename)[0]
    script = _PLOT_TEMPLATE.format(name=name, csv=filename, x_column=x_column, y_columns=list(y_columns),
                                   log_line='ax.set_yscale("log")\n' if log_y else "")
    path = os.path.join(directory, f"plot_{name}.py")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(script)
    return path


def write_json(document: Dict[str, Any], path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    payload = {"schema_version": SCHEMA_VERSION, **_jsonable(document)}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    logger.info(f"Reporte JSON escrito: {path}")
    return path


def to_jsonable(value: Any) -> Any:
    return _jsonable(value)
