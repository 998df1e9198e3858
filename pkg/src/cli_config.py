"""
Configuración de corridas de gap_green: RunConfig, parseo/validación del JSON,
serialización canónica y archivos de ejemplo para `app.py init`.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv

from src.exceptions import ConfigError
from src.operator_model import (PeriodicOperator, free_operator, mathieu_operator, operator_from_dict,
                                operator_to_dict)

# Cargar variables de entorno
load_dotenv()

logger = logging.getLogger(__name__)

# Tolerancias por defecto
TOLERANCES = {
    "tol_real": 1e-8,
    "tol_gauss": 1e-11,
    "tol_level": 1e-11,
    "tol_quad": 1e-6,
    "tol_F": 1e-8,
    "tol_sym": 1e-6,
}

# Configuración de ejecución por defecto
RUN_DEFAULTS = {
    "directions": 64,
    "r_list": [10.0, 20.0, 40.0],
    "grid_resolution": 33,
    "n_bands": 4,
    "eta_radius": 1.0,
    "fit_directions": 8,
    "epsilon": 0.25,
    "output_dir": "output",
    "threads": 1,
}


# GAPGREEN_OUTPUT_DIR y GAPGREEN_THREADS solo dan valores por defecto: un valor explícito en la configuración manda
def _env_output_dir() -> str:
    return os.getenv("GAPGREEN_OUTPUT_DIR", RUN_DEFAULTS["output_dir"])


def _env_threads() -> int:
    value = os.getenv("GAPGREEN_THREADS")
    if value is None:
        return RUN_DEFAULTS["threads"]
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(f"GAPGREEN_THREADS no es un entero: {value!r}", field="threads")


@dataclass
class RunConfig:
    operator: Union[str, Dict[str, Any]]
    cutoff: Optional[int] = None
    grid_resolution: int = RUN_DEFAULTS["grid_resolution"]
    n_bands: int = RUN_DEFAULTS["n_bands"]
    gap: Union[str, int] = 1
    side: str = "upper"
    lambda_values: List[float] = field(default_factory=list)
    lambda_fraction: Optional[float] = None
    directions: Union[int, List[List[float]]] = RUN_DEFAULTS["directions"]
    fit_directions: int = RUN_DEFAULTS["fit_directions"]
    r_list: List[float] = field(default_factory=lambda: list(RUN_DEFAULTS["r_list"]))
    eta_radius: float = RUN_DEFAULTS["eta_radius"]
    epsilon: float = RUN_DEFAULTS["epsilon"]
    oracle_grid: Optional[int] = None
    reference_correction: bool = True
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(TOLERANCES))
    output_dir: str = field(default_factory=_env_output_dir)
    cache: bool = True
    threads: int = field(default_factory=_env_threads)
    base_dir: str = field(default=".", compare=False)

    def load_operator(self) -> PeriodicOperator:
        """Operador en línea o desde ruta relativa al archivo de configuración"""
        if isinstance(self.operator, dict):
            return operator_from_dict(self.operator)
        path = Path(self.base_dir) / self.operator
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Archivo de operador no encontrado: {path}", field="operator")
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON inválido en {path}: {e.msg}", field="operator", line=e.lineno, column=e.colno)
        return operator_from_dict(data)

    def direction_count(self) -> int:
        return self.directions if isinstance(self.directions, int) else len(self.directions)


_FIELDS = {f.name for f in fields(RunConfig)} - {"base_dir"}
_KEY_ALIASES = {"lambda": "lambda_values"}


def _fail(message: str, name: str):
    raise ConfigError(message, field=name)


def _positive_int(name: str, value: Any, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        _fail(f"{name} debe ser un entero ≥ {minimum}", name)
    return value


def _number(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(f"{name} debe ser numérico", name)
    return float(value)


def _validate(data: Dict[str, Any]) -> Dict[str, Any]:
    clean: Dict[str, Any] = {}
    for key, value in data.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in _FIELDS:
            _fail(f"Clave desconocida: {key}", key)
        clean[name] = value

    if "operator" not in clean:
        _fail("Falta la clave obligatoria: operator", "operator")
    if not isinstance(clean["operator"], (str, dict)):
        _fail("operator debe ser una ruta o un objeto", "operator")

    if clean.get("cutoff") is not None:
        _positive_int("cutoff", clean["cutoff"])
    for name in ("grid_resolution", "n_bands", "fit_directions", "threads"):
        if name in clean:
            _positive_int(name, clean[name])
    if clean.get("oracle_grid") is not None:
        _positive_int("oracle_grid", clean["oracle_grid"], minimum=8)

    gap = clean.get("gap", 1)
    if gap != "bottom" and (isinstance(gap, bool) or not isinstance(gap, int) or gap < 1):
        _fail("gap debe ser 'bottom' o un entero ≥ 1", "gap")
    side = clean.get("side", "upper")
    if side not in ("upper", "lower"):
        _fail("side debe ser 'upper' o 'lower'", "side")
    if gap == "bottom" and side != "upper":
        _fail("El gap inferior solo tiene borde 'upper'", "side")

    lambdas = clean.get("lambda_values", [])
    if not isinstance(lambdas, list):
        _fail("lambda debe ser una lista", "lambda")
    clean["lambda_values"] = [_number("lambda", v) for v in lambdas]
    if any(v >= 0 for v in clean["lambda_values"]):
        _fail("Cada λ debe ser negativo respecto al borde", "lambda")
    if clean.get("lambda_fraction") is not None:
        fraction = _number("lambda_fraction", clean["lambda_fraction"])
        if not 0 < fraction < 1:
            _fail("lambda_fraction debe estar en (0, 1)", "lambda_fraction")
        clean["lambda_fraction"] = fraction
    if not clean["lambda_values"] and clean.get("lambda_fraction") is None:
        if gap == "bottom":
            _fail("El gap inferior requiere valores de lambda explícitos", "lambda")
        clean["lambda_fraction"] = 0.2

    directions = clean.get("directions", RUN_DEFAULTS["directions"])
    if isinstance(directions, list):
        if not directions or not all(isinstance(v, list) and v for v in directions):
            _fail("directions debe ser un entero o una lista de vectores", "directions")
        clean["directions"] = [[_number("directions", c) for c in v] for v in directions]
    else:
        _positive_int("directions", directions)

    r_list = clean.get("r_list", RUN_DEFAULTS["r_list"])
    if not isinstance(r_list, list):
        _fail("r_list debe ser una lista", "r_list")
    clean["r_list"] = sorted(_number("r_list", r) for r in r_list)
    if any(r <= 0 for r in clean["r_list"]):
        _fail("r_list solo admite radios positivos", "r_list")

    for name in ("eta_radius", "epsilon"):
        if name in clean:
            clean[name] = _number(name, clean[name])
            if clean[name] <= 0:
                _fail(f"{name} debe ser positivo", name)

    tolerances = dict(TOLERANCES)
    supplied = clean.get("tolerances", {})
    if not isinstance(supplied, dict):
        _fail("tolerances debe ser un objeto", "tolerances")
    for name, value in supplied.items():
        if name not in TOLERANCES:
            _fail(f"Clave desconocida: {name}", name)
        value = _number(name, value)
        if value <= 0:
            _fail(f"tol_* must be positive: {name}={value}", name)
        tolerances[name] = value
    clean["tolerances"] = tolerances

    for name in ("cache", "reference_correction"):
        if name in clean and not isinstance(clean[name], bool):
            _fail(f"{name} debe ser booleano", name)
    if "output_dir" in clean and not isinstance(clean["output_dir"], str):
        _fail("output_dir debe ser una ruta", "output_dir")
    return clean


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    """
    Parsea y valida una configuración JSON.

    Raises:
        ConfigError: con línea/columna en errores de sintaxis o con el campo en errores de validación
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido: {e.msg} (línea {e.lineno}, columna {e.colno})",
                          line=e.lineno, column=e.colno) from e
    if not isinstance(data, dict):
        raise ConfigError("La configuración debe ser un objeto JSON")
    config = RunConfig(**_validate(data))
    config.base_dir = base_dir
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"No se pudo leer {path}: {e}") from e
    return parse_config(text, base_dir=str(Path(path).resolve().parent))


def serialize_config(config: RunConfig) -> str:
    data = asdict(config)
    data.pop("base_dir")
    data["lambda"] = data.pop("lambda_values")
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def describe_config(config: RunConfig) -> str:
    operator = config.operator if isinstance(config.operator, str) else config.operator.get("name", "inline")
    lines = [
        "🔧 Configuración efectiva de gap_green",
        "=" * 40,
        f"📐 Operador: {operator}",
        f"✂️  Corte N: {config.cutoff if config.cutoff is not None else 'auto'}",
        f"🎯 Gap: {config.gap} ({config.side})",
        f"λ: {config.lambda_values or f'fracción {config.lambda_fraction} del gap'}",
        f"🧭 Direcciones: {config.direction_count()} (oráculo en {config.fit_directions})",
        f"📏 Radios: {config.r_list}",
        f"📁 Salida: {config.output_dir} | caché: {'sí' if config.cache else 'no'} | hilos: {config.threads}",
        "Tolerancias: " + ", ".join(f"{k}={v:g}" for k, v in sorted(config.tolerances.items())),
    ]
    return "\n".join(lines)


def example_files() -> Dict[str, Dict[str, Any]]:
    """Configuraciones y operadores de ejemplo que escribe `init`"""
    return {
        "operators/free_1d.json": operator_to_dict(free_operator(1)),
        "operators/free_2d.json": operator_to_dict(free_operator(2)),
        "operators/mathieu_2d_q5.json": operator_to_dict(mathieu_operator(2, 5.0)),
        "configs/free_2d.json": {
            "operator": "../operators/free_2d.json",
            "cutoff": 1,
            "gap": "bottom",
            "lambda": [-0.25],
            "r_list": [10.0, 20.0, 40.0],
            "eta_radius": 1.5,
        },
        "configs/mathieu_2d.json": {
            "operator": "../operators/mathieu_2d_q5.json",
            "cutoff": 5,
            "gap": 1,
            "side": "lower",
            "lambda_fraction": 0.2,
            "fit_directions": 8,
            "r_list": [8.0, 16.0, 24.0, 32.0],
            "eta_radius": 0.8,
            "threads": 8,
        },
    }


def create_example_files(directory: str = ".", overwrite: bool = False) -> List[str]:
    written = []
    for relative, content in example_files().items():
        path = Path(directory) / relative
        if path.exists() and not overwrite:
            logger.info(f"Se conserva {path} (ya existe)")
            continue
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(content, f, indent=2, ensure_ascii=False)
            f.write("\n")
        written.append(str(path))
    return written
