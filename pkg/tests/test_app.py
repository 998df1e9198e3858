import json

import pytest
from click.testing import CliRunner

from app import cli
from src.operator_model import free_operator, operator_to_dict


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, **overrides):
    data = {"operator": operator_to_dict(free_operator(2)), "cutoff": 1, "grid_resolution": 9, "gap": "bottom",
            "lambda": [-0.25], "cache": False, "output_dir": str(tmp_path / "out")}
    data.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_init_writes_examples(runner, tmp_path):
    result = runner.invoke(cli, ["init", "--directory", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "5 archivos escritos" in result.output
    assert (tmp_path / "configs" / "mathieu_2d.json").exists()


def test_show_config(runner, tmp_path):
    result = runner.invoke(cli, ["--threads", "2", "show-config", "-c", _write_config(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "Configuración efectiva" in result.output
    assert "hilos: 2" in result.output


def test_invalid_config_exits_with_error(runner, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"operator": ', encoding="utf-8")
    result = runner.invoke(cli, ["show-config", "-c", str(path)])
    assert result.exit_code == 1
    assert "❌ Error" in result.output


def test_edge_check_on_free_operator(runner, tmp_path):
    result = runner.invoke(cli, ["edge-check", "-c", _write_config(tmp_path)])
    assert result.exit_code == 0, result.output
    assert "a5" in result.output
    with open(tmp_path / "out" / "edge.json", encoding="utf-8") as f:
        edge = json.load(f)
    assert edge["assumptions"]["overall"] is True


def test_dispersion_command(runner, tmp_path):
    result = runner.invoke(cli, ["dispersion", "-c", _write_config(tmp_path), "--beta", "0.1,0.2"])
    assert result.exit_code == 0, result.output
    assert "E=-0.05" in result.output
    assert (tmp_path / "out" / "dispersion.csv").exists()


def test_validate_exits_when_gap_is_missing(runner, tmp_path):
    result = runner.invoke(cli, ["validate", "-c", _write_config(tmp_path, gap=1, side="upper", **{"lambda": []})])
    assert result.exit_code == 1
    assert (tmp_path / "out" / "report.json").exists()
