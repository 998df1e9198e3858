#!/usr/bin/env python3
"""
CLI de gap_green: funciones de Green dentro de gaps espectrales de operadores periódicos.

Uso:
    python app.py init                                   # escribe configs/ y operators/ de ejemplo
    python app.py show-config -c configs/free_2d.json
    python app.py bands -c configs/mathieu_2d.json
    python app.py edge-check -c configs/mathieu_2d.json
    python app.py support -c configs/mathieu_2d.json
    python app.py oracle -c configs/free_2d.json --x 10,0
    python app.py validate -c configs/mathieu_2d.json
"""
import dataclasses
import logging
import os
import sys
from functools import wraps

import click
import numpy as np

from src.asymptotics import LeadingTermInputs, integral_I_closed_form, integral_I_numeric, leading_term
from src.cli_config import RunConfig, create_example_files, describe_config, load_config
from src.complex_dispersion import samples_frame
from src.exceptions import GapGreenError
from src.green_oracle import free_reference, green_converged, samples_frame as oracle_frame
from src.level_set_geometry import support_frame, support_point, support_sweep
from src.report_io import write_csv, write_json
from src.validation_harness import build_pipeline, full_report, select_directions

logger = logging.getLogger(__name__)


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise click.BadParameter(f"Se esperaba una lista separada por comas: {text!r}")


def _handle_errors(command):
    """Errores del dominio → código de salida 1"""
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except GapGreenError as e:
            click.echo(f"❌ Error: {e}", err=True)
            sys.exit(1)
    return wrapper


def _config(ctx: click.Context, path: str) -> RunConfig:
    config = load_config(path)
    overrides = {k: v for k, v in ctx.obj.items() if v is not None}
    return dataclasses.replace(config, **overrides) if overrides else config


config_option = click.option("--config", "-c", "config_path", required=True, type=click.Path(exists=True),
                             help="Archivo JSON de configuración")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Logs en nivel DEBUG")
@click.option("--output-dir", type=click.Path(), default=None, help="Directorio de salida")
@click.option("--threads", type=int, default=None, help="Hilos para barridos y oráculo")
@click.option("--no-cache", is_flag=True, help="Desactiva el caché de resultados")
@click.pass_context
def cli(ctx, verbose, output_dir, threads, no_cache):
    """gap_green: asintótica de la función de Green en gaps espectrales"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s - %(levelname)s - %(message)s")
    ctx.obj = {"output_dir": output_dir, "threads": threads, "cache": False if no_cache else None}


@cli.command()
@click.option("--directory", type=click.Path(), default=".", help="Raíz donde escribir los ejemplos")
@click.option("--overwrite", is_flag=True, help="Reemplaza archivos existentes")
def init(directory, overwrite):
    """Escribe configuraciones y operadores de ejemplo"""
    written = create_example_files(directory, overwrite)
    for path in written:
        click.echo(f"📝 {path}")
    click.echo(f"✅ {len(written)} archivos escritos")


@cli.command("show-config")
@config_option
@click.pass_context
@_handle_errors
def show_config(ctx, config_path):
    """Muestra la configuración efectiva"""
    click.echo(describe_config(_config(ctx, config_path)))


@cli.command()
@config_option
@click.pass_context
@_handle_errors
def bands(ctx, config_path):
    """Bandas en la malla y gaps detectados"""
    pipeline = build_pipeline(_config(ctx, config_path))
    path = write_csv(pipeline.bands.to_frame(), os.path.join(pipeline.config.output_dir, "bands.csv"))
    click.echo(f"📊 Bandas escritas en {path} (N={pipeline.cutoff})")
    click.echo(f"🎯 Gap seleccionado: {pipeline.gap.interval} (debajo de la banda {pipeline.gap.below_band + 1})")


@cli.command("edge-check")
@config_option
@click.pass_context
@_handle_errors
def edge_check(ctx, config_path):
    """Borde del gap y verificación de hipótesis A1-A5"""
    pipeline = build_pipeline(_config(ctx, config_path))
    edge = pipeline.edge
    click.echo(f"📍 Borde: banda {edge.band_index} ({edge.side}), k₀={edge.k0.tolist()}, E={edge.edge_energy:.12g}")
    for check in pipeline.assumptions.checks:
        mark = "✅" if check.passed else "❌"
        click.echo(f"   {mark} {check.name}: {check.measured:.3e} (umbral {check.threshold:.3e}) {check.detail}")
    write_json({"edge": edge.to_dict(), "assumptions": pipeline.assumptions.to_dict()},
               os.path.join(pipeline.config.output_dir, "edge.json"))
    if not pipeline.assumptions.overall:
        sys.exit(2)


@cli.command()
@config_option
@click.option("--beta", "betas", multiple=True, required=True, help="β real, p. ej. 0.1,0.2 (repetible)")
@click.pass_context
@_handle_errors
def dispersion(ctx, config_path, betas):
    """E(β), gradiente y Hessiano de la banda continuada"""
    pipeline = build_pipeline(_config(ctx, config_path))
    samples = [pipeline.dispersion.sample(_vector(b)) for b in betas]
    for sample in samples:
        click.echo(f"β={sample.beta.tolist()}: E={sample.energy:.15g}, cóncava={sample.is_concave()}")
    write_csv(samples_frame(samples), os.path.join(pipeline.config.output_dir, "dispersion.csv"))


@cli.command()
@config_option
@click.pass_context
@_handle_errors
def support(ctx, config_path):
    """Puntos soporte para cada λ y dirección configurada"""
    pipeline = build_pipeline(_config(ctx, config_path))
    config = pipeline.config
    directions = select_directions(config.directions, pipeline.op.dimension)
    for index, lam in enumerate(pipeline.lambdas):
        points = support_sweep(pipeline.dispersion, pipeline.edge, lam, directions, config.threads)
        path = write_csv(support_frame(points), os.path.join(config.output_dir, f"support_l{index}.csv"))
        click.echo(f"🧭 λ̃={lam:.6g}: h ∈ [{min(p.h for p in points):.6g}, {max(p.h for p in points):.6g}] → {path}")


@cli.command()
@config_option
@click.option("--direction", "direction", required=True, help="Dirección s, p. ej. 1,0")
@click.option("--r", "radius", type=float, required=True, help="Distancia |x-y|")
@click.option("--integral", is_flag=True, help="Compara también I_s numérica con la forma cerrada")
@click.pass_context
@_handle_errors
def asymptote(ctx, config_path, direction, radius, integral):
    """Término principal G₀ en x = r·s, y = 0"""
    pipeline = build_pipeline(_config(ctx, config_path))
    s = _vector(direction)
    s = s / np.linalg.norm(s)
    for lam in pipeline.lambdas:
        sp = support_point(pipeline.dispersion, pipeline.edge, lam, s)
        pair = pipeline.dispersion.bloch_pair(sp.beta_s)
        value = leading_term(LeadingTermInputs(pipeline.edge, sp, pair, radius * s, np.zeros_like(s)))
        click.echo(f"📐 λ̃={lam:.6g}: h={sp.h:.12g}, G₀={value:.12g}")
        if integral:
            numeric = integral_I_numeric(pipeline.dispersion, sp, pipeline.config.eta_radius, radius)
            click.echo(f"   I numérica={numeric:.10g}, forma cerrada={integral_I_closed_form(sp, radius):.10g}")


@cli.command()
@config_option
@click.option("--x", "x", required=True, help="Punto x, p. ej. 10,0")
@click.option("--y", "y", default=None, help="Punto y (por defecto el origen)")
@click.pass_context
@_handle_errors
def oracle(ctx, config_path, x, y):
    """G(x, y) por integración en la zona de Brillouin"""
    pipeline = build_pipeline(_config(ctx, config_path))
    config = pipeline.config
    x = _vector(x)
    y = np.zeros_like(x) if y is None else _vector(y)
    oracle_config = {"tol_quad": config.tolerances["tol_quad"], "threads": config.threads,
                     "reference_correction": config.reference_correction}
    samples = []
    for lam in pipeline.lambdas:
        physical = pipeline.physical(lam)
        sample = green_converged(pipeline.op, physical, [x], y, pipeline.cutoff, config.oracle_grid,
                                 config=oracle_config)[0]
        samples.append(sample)
        line = f"🔬 λ={physical:.10g}: G={sample.value:.12g} (M={sample.grid}, convergido={sample.converged})"
        if pipeline.op.name.startswith("free_") and pipeline.op.dimension in (1, 2, 3):
            line += f", referencia libre={free_reference(physical, sample.r, pipeline.op.dimension):.12g}"
        click.echo(line)
    write_csv(oracle_frame(samples), os.path.join(config.output_dir, "oracle.csv"))


@cli.command()
@config_option
@click.pass_context
@_handle_errors
def validate(ctx, config_path):
    """Pipeline completo y reporte de aceptación"""
    config = _config(ctx, config_path)
    report = full_report(config)
    failed = [name for name, item in report["acceptance"].items() if not item["passed"]]
    errors = [name for name, status in report["stages"].items() if status["status"] != "ok"]
    for name in errors:
        click.echo(f"❌ Etapa {name}: {report['stages'][name]['error']}", err=True)
    for name in failed:
        click.echo(f"⚠️  Criterio no cumplido: {name}", err=True)
    click.echo(f"📁 Reporte en {os.path.join(config.output_dir, 'report.json')}")
    if errors and "pipeline" in errors:
        sys.exit(1)
    if not report["passed"]:
        sys.exit(2)
    click.echo("✅ Todos los criterios cumplidos")


if __name__ == "__main__":
    cli()
