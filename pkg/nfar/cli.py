# nfar/cli.py

import contextlib
import json
import os
import sys
from typing import get_args

import click
import pandas as pd

from .diagnostics import run_condition_checks
from .dynamics import NfarModel, load_path, save_path, simulate_path
from .errors import NfarError
from .experiment import ExperimentConfig, evaluate_checkpoint, load_config
from .gp_sampler import EmbeddingPolicy, NoiseSampler, StationaryKernel, build_spectrum, cached_spectrum
from .grid import GridSpec
from .learner import train as fit_operator
from .network import dump_checkpoint, load_checkpoint
from .pipeline import run_pipeline
from .utils import DATA_DIR, atomic_write_text, default_workers, json_safe

POLICIES = list(get_args(EmbeddingPolicy))


def _to_json(payload: dict) -> str:
    return json.dumps(json_safe(payload), indent=2, allow_nan=False)


def _echo_json(payload: dict):
    click.echo(_to_json(payload))


def _notices_to_stderr():
    """Keep library warnings off stdout while a command emits JSON there."""
    return contextlib.redirect_stdout(sys.stderr)


def _config_or_default(config: str | None) -> ExperimentConfig:
    return load_config(config) if config else ExperimentConfig()


def _parse_snapshots(value: str | None) -> list[int] | None:
    if not value:
        return None
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}", param_hint='--snapshots')


@click.group()
def cli():
    """Simulate NFAR paths, audit the mixing conditions and learn the transition kernel."""


@cli.command('check-embedding')
@click.option('--grid-size', default=100, show_default=True, type=int)
@click.option('--scale', default=5.0, show_default=True, type=float, help="Gaussian kernel decay rate a.")
@click.option('--policy', default='clamp', show_default=True, type=click.Choice(POLICIES),
              help="Handling of eigenvalues negative beyond roundoff.")
def check_embedding(grid_size, scale, policy):
    """Print the circulant-embedding spectrum summary as JSON."""
    try:
        with _notices_to_stderr():
            spectrum = build_spectrum(StationaryKernel(scale=scale), grid_size, policy)
    except NfarError as e:
        raise click.ClickException(str(e))
    _echo_json(spectrum.report())


@cli.command()
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--grid-size', default=100, show_default=True, type=int)
@click.option('--length', default=1000, show_default=True, type=int)
@click.option('--burn-in', default=500, show_default=True, type=int)
@click.option('--scale', default=5.0, show_default=True, type=float)
@click.option('--amplitude', default=5.0, show_default=True, type=float)
@click.option('--nonlinearity', default='trig', show_default=True, type=click.Choice(['trig', 'identity', 'zero']))
@click.option('--embedding', default='clamp', show_default=True, type=click.Choice(POLICIES))
@click.option('--snapshots', default=None, help="Comma-separated 1-based time indices to write instead of every frame.")
@click.option('--out', default=None, type=click.Path(file_okay=False), help="Defaults to NFAR_DATA_DIR/path_S<grid>_seed<seed>.")
def simulate(seed, grid_size, length, burn_in, scale, amplitude, nonlinearity, embedding, snapshots, out):
    """Simulate a path and write it as CSV frames plus meta.json."""
    model = NfarModel(kernel=StationaryKernel(scale=scale), amplitude=amplitude,
                      nonlinearity=nonlinearity, grid=GridSpec(size=grid_size))
    sampler = NoiseSampler(cached_spectrum(model.kernel, grid_size, embedding), seed)
    try:
        path = simulate_path(model, sampler, length, burn_in=burn_in, seed=seed)
    except NfarError as e:
        raise click.ClickException(str(e))
    out = out or os.path.join(DATA_DIR, f"path_S{grid_size}_seed{seed}")
    save_path(path, out, snapshots=_parse_snapshots(snapshots))
    click.echo(f"Saved {length} fields on a {grid_size}x{grid_size} grid to {out}")


@cli.command('check-conditions')
@click.option('--grid-size', default=16, show_default=True, type=int)
@click.option('--length', default=2000, show_default=True, type=int)
@click.option('--burn-in', default=500, show_default=True, type=int)
@click.option('--seed', default=0, show_default=True, type=int)
@click.option('--m-terms', default=50, show_default=True, type=int)
@click.option('--max-lag', default=20, show_default=True, type=int)
@click.option('--config', default=None, type=click.Path(exists=True, dir_okay=False),
              help="Experiment TOML whose [model] section is audited.")
@click.option('--out', default=None, type=click.Path(dir_okay=False), help="Also write the report here.")
def check_conditions(grid_size, length, burn_in, seed, m_terms, max_lag, config, out):
    """Audit the drift and smoothness conditions and fit the mixing proxy."""
    cfg = _config_or_default(config)
    model = cfg.model.build(GridSpec(size=grid_size))
    try:
        with _notices_to_stderr():
            report = run_condition_checks(model, length=length, seed=seed, burn_in=burn_in,
                                          m_terms=m_terms, max_lag=max_lag, policy=cfg.model.embedding)
    except (NfarError, ValueError) as e:
        raise click.ClickException(str(e))
    text = _to_json(report)
    if out:
        atomic_write_text(out, text)
    click.echo(text)


@cli.command()
@click.option('--data', required=True, type=click.Path(exists=True, file_okay=False), help="Path directory from `simulate`.")
@click.option('--config', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(dir_okay=False), help="Checkpoint JSON.")
@click.option('--trace', 'trace_path', default=None, type=click.Path(dir_okay=False), help="Per-epoch trace CSV.")
@click.option('--seed', default=None, type=int, help="Overrides [train].seed.")
@click.option('--restore-best', is_flag=True, help="Keep the best-validation weights instead of the final ones.")
def train(data, config, out, trace_path, seed, restore_best):
    """Fit the kernel network on a saved path."""
    cfg = _config_or_default(config).train
    updates = {}
    if seed is not None:
        updates['seed'] = seed
    if restore_best:
        updates['restore_best'] = True
    cfg = cfg.model_copy(update=updates)
    try:
        path = load_path(data)
        click.echo(f"Training on {len(path)} fields ({path.grid.size}x{path.grid.size}), seed {cfg.seed}")
        learned, trace = fit_operator(path, cfg, verbose=True)
    except (NfarError, ValueError) as e:
        raise click.ClickException(str(e))
    atomic_write_text(out, dump_checkpoint(learned.kernel, seed=cfg.seed, epoch=trace.stop_epoch))
    if trace_path:
        atomic_write_text(trace_path, trace.to_frame().to_csv(index=False, lineterminator="\n"))
    click.echo(trace.to_frame().tail(5).to_markdown(index=False))
    click.echo(f"Stopped at epoch {trace.stop_epoch}; checkpoint written to {out}")


@cli.command()
@click.option('--config', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(file_okay=False))
@click.option('--workers', default=None, type=int, help="Defaults to NFAR_WORKERS.")
def sweep(config, out, workers):
    """Run (or resume) a sample-size sweep and write its artifacts."""
    try:
        cfg = load_config(config)
        outcome = run_pipeline(cfg, out, workers=workers if workers is not None else default_workers())
    except (NfarError, ValueError) as e:
        raise click.ClickException(str(e))
    summary = pd.DataFrame(outcome['summary'])
    if not summary.empty:
        click.echo(summary.to_markdown(index=False))
    click.echo(f"log-log slope: {outcome['slope']}")
    if outcome['incomplete']:
        click.echo(f"WARNING: {len(outcome['incomplete'])} incomplete cells.")


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--config', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--test-seed', required=True, type=int)
def evaluate(checkpoint, config, test_seed):
    """Recompute g for a saved network against a fresh test field."""
    cfg = _config_or_default(config)
    with open(checkpoint, encoding='utf-8') as fp:
        params, meta = load_checkpoint(fp.read())
    try:
        with _notices_to_stderr():
            report = evaluate_checkpoint(cfg, params, test_seed)
    except (NfarError, ValueError) as e:
        raise click.ClickException(str(e))
    report['checkpoint'] = os.path.basename(checkpoint)
    report['epoch'] = meta.get('epoch')
    _echo_json(report)


@cli.command()
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', default=8000, show_default=True, type=int)
def serve(host, port):
    """Serve the HTTP API with uvicorn."""
    import uvicorn
    uvicorn.run("nfar.main:app", host=host, port=port)


if __name__ == '__main__':
    cli()
