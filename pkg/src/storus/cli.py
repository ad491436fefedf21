"""Command line entry points.

Every subcommand reads one structured YAML config, writes CSV and JSON
records (and figures unless --no-figures) into the configured output
directory, and exits 0 on success.  Failures print a one-line JSON
error record to stderr and exit nonzero: 2 for configuration and
missing-input problems, 1 for runtime failures.

Determinism contract: re-running a subcommand with an identical config
reproduces the CSV and JSON numeric content byte for byte.  Figures
are rendered from that same data and are excluded from the guarantee.
The only environment influence is STORUS_THREADS, which controls how
many worker threads an ensemble may use and never changes values.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from . import __version__, workflows
from .config import ConfigError, RunConfig, parse_config
from .inhomo import ConvergenceError

__all__ = ["main"]


def _fail(kind: str, exc: Exception, code: int, field: str | None = None) -> None:
    record = {"error": kind, "type": exc.__class__.__name__, "message": str(exc)}
    if field is not None:
        record["field"] = field
    click.echo(json.dumps(record, sort_keys=True), err=True)
    sys.exit(code)


def _guarded(action) -> None:
    try:
        action()
    except ConfigError as exc:
        _fail("config", exc, 2, field=exc.field_path)
    except FileNotFoundError as exc:
        _fail("missing_input", exc, 2)
    except ConvergenceError as exc:
        _fail("convergence", exc, 1)
    except (ValueError, OSError) as exc:
        _fail("invalid", exc, 1)


def _load_config(
    config_path: str,
    seed: int | None = None,
    out: str | None = None,
    paths: int | None = None,
    system: str | None = None,
) -> RunConfig:
    source = Path(config_path)
    if not source.exists():
        raise FileNotFoundError(f"config file not found: {source}")
    try:
        data = yaml.safe_load(source.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("file", f"not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("file", "config file must hold a mapping")
    if seed is not None or paths is not None:
        if not isinstance(data.get("ensemble"), dict):
            data["ensemble"] = {}
        if seed is not None:
            data["ensemble"]["seed"] = seed
        if paths is not None:
            data["ensemble"]["paths"] = paths
    if out is not None:
        if not isinstance(data.get("output"), dict):
            data["output"] = {}
        data["output"]["directory"] = out
    if system is not None:
        data["system"] = system
    return parse_config(data)


_CONFIG = click.option("--config", "config_path", required=True, type=str, help="YAML run config.")
_SEED = click.option("--seed", type=int, default=None, help="Override ensemble.seed.")
_OUT = click.option("--out", type=str, default=None, help="Override output.directory.")
_PATHS = click.option("--paths", type=int, default=None, help="Override ensemble.paths.")
_SYSTEM = click.option(
    "--system",
    type=click.Choice(["homogeneous", "inhomogeneous"]),
    default=None,
    help="Override the system selector.",
)
_NO_FIGURES = click.option(
    "--no-figures", is_flag=True, help="Skip figure rendering; tables are always written."
)


@click.group()
@click.version_option(version=__version__, prog_name="storus")
def main() -> None:
    """Stochastic incompressible flow experiments with audited budgets."""


@main.command()
@_CONFIG
@_SEED
@_OUT
@_PATHS
@_SYSTEM
@_NO_FIGURES
def simulate(config_path, seed, out, paths, system, no_figures) -> None:
    """Run the configured ensemble; write checkpoints and a manifest."""

    def action() -> None:
        config = _load_config(config_path, seed, out, paths, system)
        manifest = workflows.run_simulate(config, render=not no_figures)
        click.echo(f"wrote {Path(config.out_dir) / 'manifest.json'} ({manifest['paths']} paths)")

    _guarded(action)


@main.command()
@click.option("--config", "config_path", type=str, default=None, help="YAML run config (locates the manifest).")
@click.option("--manifest", "manifest_path", type=str, default=None, help="Manifest file or its directory.")
@_OUT
@_NO_FIGURES
def budget(config_path, manifest_path, out, no_figures) -> None:
    """Replay a simulated manifest and write its energy accounting."""

    def action() -> None:
        if manifest_path is None and config_path is None:
            raise ConfigError("manifest", "pass --manifest or --config to locate the run")
        source = manifest_path
        if source is None:
            source = _load_config(config_path).out_dir
        summary = workflows.run_budget(source, out_dir=out, render=not no_figures)
        target = out if out is not None else source
        click.echo(f"wrote budget summary under {target}")
        del summary

    _guarded(action)


@main.command("commutator-scan")
@_CONFIG
@_SEED
@_OUT
@_PATHS
@_SYSTEM
@_NO_FIGURES
def commutator_scan_command(config_path, seed, out, paths, system, no_figures) -> None:
    """Scan a nonlinearity's mollification commutator across scales."""

    def action() -> None:
        config = _load_config(config_path, seed, out, paths, system)
        summary = workflows.run_commutator_scan(config, render=not no_figures)
        click.echo(
            f"fitted slope {summary['fitted_slope']:.4f} over {len(summary['epsilons'])} scales"
        )

    _guarded(action)


@main.command()
@_CONFIG
@_SEED
@_OUT
@_PATHS
@_SYSTEM
@click.option("--field", "field_path", type=str, default=None, help="Field file (.npy) to analyze.")
@_NO_FIGURES
def besov(config_path, seed, out, paths, system, field_path, no_figures) -> None:
    """Measure roughness of a stored or synthetic field."""

    def action() -> None:
        config = _load_config(config_path, seed, out, paths, system)
        report = workflows.run_besov(config, field_path=field_path, render=not no_figures)
        click.echo(f"fitted exponent {report['fitted_alpha']:.4f}")

    _guarded(action)


@main.command("noise-check")
@_CONFIG
@_SEED
@_OUT
@_PATHS
@_SYSTEM
@click.option("--samples", type=int, default=None, help="Override experiment.noise_samples.")
@_NO_FIGURES
def noise_check(config_path, seed, out, paths, system, samples, no_figures) -> None:
    """Verify the noise family's growth conditions and increment moments."""

    def action() -> None:
        config = _load_config(config_path, seed, out, paths, system)
        report = workflows.run_noise_check(config, n_samples=samples, render=not no_figures)
        verdict = "pass" if report["passed"] else "fail"
        click.echo(f"noise check: {verdict}")

    _guarded(action)
