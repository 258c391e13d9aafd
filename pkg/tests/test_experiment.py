import math
import os

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from nfar.errors import ReplicationError, TrainingAbortedError
from nfar.experiment import (ExperimentConfig, SweepRunner, cell_name, evaluate_checkpoint, load_config, loglog_slope,
                             run_replication, run_sweep, summarize)
from nfar.learner import TrainTrace, true_operator_model
from nfar.network import MlpArchitecture, MlpParams, load_checkpoint
from nfar.reporting import ArtifactReporter, render_loglog_svg
from nfar.utils import default_workers

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'configs')


def tiny_config(**sweep) -> ExperimentConfig:
    return ExperimentConfig.model_validate({
        'sim': {'sim_grid': 8, 'learn_grid': 4, 'burn_in': 5},
        'train': {'hidden': [4], 'epochs_max': 2, 'patience': 2, 'batch_size': 16, 's_mc': 4},
        'sweep': {'T_values': [6, 8], 'B': 2, 'master_seed': 3, **sweep},
    })


def oracle_trainer(path, cfg, rng=None):
    return true_operator_model(ExperimentConfig().model.build(path.grid), path.grid), TrainTrace(stop_epoch=0)


class CountingTrainer:
    def __init__(self, fail=False):
        self.calls = []
        self.fail = fail

    def __call__(self, path, cfg, rng=None):
        self.calls.append(len(path))
        if self.fail:
            raise TrainingAbortedError(1, 0, math.nan)
        return oracle_trainer(path, cfg, rng)


# --- Config ---

def test_shipped_configs_load():
    full = load_config(os.path.join(CONFIG_DIR, 'full.toml'))
    assert full.sim.sim_grid == 100 and full.sim.learn_grid == 25
    assert full.sweep.B == 161
    assert full.sweep.T_values[0] == 250 and full.sweep.T_values[-1] == 5000
    assert full.train.s_mc == 500
    desk = load_config(os.path.join(CONFIG_DIR, 'desk.toml'))
    assert desk.sweep.designated == (0, 2000)
    assert desk.train.s_mc == 500 and desk.train.epochs_max == 60
    assert (desk.sim.sim_grid, desk.sim.learn_grid, desk.sweep.B) == (32, 16, 8)
    assert desk.sweep.T_values == [250, 1000, 2000]


def test_master_seed_environment_override(monkeypatch, tmp_path):
    path = tmp_path / 'exp.toml'
    path.write_text("[sweep]\nT_values = [10, 20]\nB = 2\nmaster_seed = 1\n")
    assert load_config(str(path)).sweep.master_seed == 1
    monkeypatch.setenv('NFAR_MASTER_SEED', '42')
    assert load_config(str(path)).sweep.master_seed == 42


@pytest.mark.parametrize("bad", [
    {'sim': {'sim_grid': 10, 'learn_grid': 4}},
    {'sweep': {'T_values': [500, 250]}},
    {'sweep': {'T_values': [5, 10]}},
    {'sweep': {'T_values': [10, 20], 'designated_T': 30}},
    {'sweep': {'B': 2, 'designated_b': 2}},
    {'train': {'epochs_max': 3, 'patience': 4}},
    {'model': {'embedding': 'loose'}},
    {'extra': {}},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(bad)


# --- Summaries ---

def test_summarize_and_slope():
    results = pd.DataFrame({'b': [0, 1, 0, 1], 'T': [100, 100, 1000, 1000], 'g': [1.0, 3.0, 0.1, 0.3],
                            'stop_epoch': [1, 1, 1, 1]})
    summary = summarize(results)
    assert summary['T'].tolist() == [100, 1000]
    assert summary['G'].tolist() == pytest.approx([2.0, 0.2])
    assert summary['std'].iloc[0] == pytest.approx(math.sqrt(2.0))
    assert summary['stderr'].iloc[0] == pytest.approx(1.0)
    assert summary['n'].tolist() == [2, 2]
    assert loglog_slope(summary) == pytest.approx(-1.0)


def test_slope_needs_two_positive_points():
    assert math.isnan(loglog_slope(pd.DataFrame({'T': [100, 200], 'G': [0.5, 0.0]})))
    assert summarize(pd.DataFrame(columns=['b', 'T', 'g'])).empty


# --- Replications and sweeps ---

def test_oracle_replication_scores_zero():
    out = run_replication(tiny_config(), 0, 6, trainer=oracle_trainer)
    assert out.g == pytest.approx(0.0, abs=1e-20)
    assert out.true_field.spec.size == 4


def test_replication_draws_are_reproducible():
    cfg = tiny_config()
    a = run_replication(cfg, 1, 8)
    b = run_replication(cfg, 1, 8)
    assert a.g == b.g
    other = run_replication(cfg, 0, 8)
    assert other.g != a.g


def test_failed_training_is_wrapped():
    trainer = CountingTrainer(fail=True)
    with pytest.raises(ReplicationError) as info:
        run_replication(tiny_config(), 0, 6, trainer=trainer)
    assert info.value.b == 0 and info.value.T == 6


def test_sweep_layout_and_ordering(tmp_path):
    run_dir = str(tmp_path / 'run')
    result = run_sweep(tiny_config(), run_dir, trainer=oracle_trainer)
    assert result.complete and not result.empty
    assert list(zip(result.results['T'], result.results['b'])) == [(6, 0), (6, 1), (8, 0), (8, 1)]
    assert os.path.exists(os.path.join(run_dir, 'config.json'))
    for b, T in [(0, 6), (1, 8)]:
        assert os.path.exists(os.path.join(run_dir, 'cells', f"{cell_name(b, T)}.json"))
    with open(os.path.join(run_dir, 'cells', 'index.jsonl'), encoding='utf-8') as fp:
        assert len(fp.read().splitlines()) == 4
    # designated cell defaults to (0, largest T)
    assert result.designated == (0, 8)
    assert os.path.exists(os.path.join(run_dir, 'cells', 'b0000_T00008_true.csv'))
    assert os.path.exists(os.path.join(run_dir, 'cells', 'b0000_T00008_predicted.csv'))


def test_sweep_resumes_only_missing_cells(tmp_path):
    run_dir = str(tmp_path / 'run')
    cfg = tiny_config()
    run_sweep(cfg, run_dir, trainer=oracle_trainer)
    os.remove(os.path.join(run_dir, 'cells', f"{cell_name(1, 6)}.json"))
    trainer = CountingTrainer()
    result = run_sweep(cfg, run_dir, trainer=trainer)
    assert len(trainer.calls) == 1
    assert result.complete


def test_failed_cells_are_reported_and_retried(tmp_path):
    run_dir = str(tmp_path / 'run')
    cfg = tiny_config()
    result = run_sweep(cfg, run_dir, trainer=CountingTrainer(fail=True))
    assert result.empty
    assert len(result.incomplete) == 4
    assert {f['status'] for f in result.failures} == {'failed'}

    retry = CountingTrainer()
    result = run_sweep(cfg, run_dir, trainer=retry)
    assert len(retry.calls) == 4
    assert result.complete and not result.failures


def test_config_mismatch_is_refused(tmp_path):
    run_dir = str(tmp_path / 'run')
    run_sweep(tiny_config(), run_dir, trainer=oracle_trainer)
    with pytest.raises(ValueError):
        SweepRunner(tiny_config(master_seed=4), run_dir, trainer=oracle_trainer).run()


def test_real_training_sweep_is_deterministic(tmp_path):
    cfg = tiny_config(T_values=[6], B=2)
    first = run_sweep(cfg, str(tmp_path / 'a'))
    second = run_sweep(cfg, str(tmp_path / 'b'))
    assert first.results['g'].tolist() == second.results['g'].tolist()
    assert np.all(first.results['g'] > 0)

    ckpt = os.path.join(str(tmp_path / 'a'), 'cells', 'b0000_T00006_checkpoint.json')
    with open(ckpt, encoding='utf-8') as fp:
        params, meta = load_checkpoint(fp.read())
    assert meta['seed'] == 3
    report = evaluate_checkpoint(cfg, params, test_seed=11)
    assert report['g'] > 0 and report['grid_size'] == 4
    assert evaluate_checkpoint(cfg, params, test_seed=11)['g'] == report['g']


def _results_bytes(result, out_dir) -> bytes:
    ArtifactReporter(result, out_dir).run()
    with open(os.path.join(out_dir, 'results.csv'), 'rb') as fp:
        return fp.read()


def test_results_csv_is_byte_identical_across_workers_and_resume(tmp_path):
    cfg = tiny_config()
    serial = _results_bytes(run_sweep(cfg, str(tmp_path / 'serial'), workers=1), str(tmp_path / 'serial'))
    pooled = _results_bytes(run_sweep(cfg, str(tmp_path / 'pooled'), workers=2), str(tmp_path / 'pooled'))
    assert pooled == serial

    run_dir = str(tmp_path / 'resumed')
    run_sweep(cfg, run_dir, workers=1)
    os.remove(os.path.join(run_dir, 'cells', f"{cell_name(1, 8)}.json"))
    runner = SweepRunner(cfg, run_dir, workers=1)
    assert runner.pending_cells() == [(1, 8)]
    resumed = _results_bytes(runner.run(), run_dir)
    assert resumed == serial
    assert serial.decode('utf-8').splitlines()[0] == 'b,T,g,stop_epoch'


def test_evaluate_checkpoint_of_flat_network():
    cfg = tiny_config()
    p = MlpParams.zeros(MlpArchitecture(hidden=(2,)))
    report = evaluate_checkpoint(cfg, p, test_seed=0)
    assert report['g'] > 0
    assert report['test_seed'] == 0


# --- Reporting ---

def test_reporter_writes_artifacts(tmp_path):
    run_dir = str(tmp_path / 'run')
    result = run_sweep(tiny_config(), run_dir, trainer=oracle_trainer)
    dfs = {}
    paths = ArtifactReporter(result, run_dir, dfs).run()
    names = sorted(os.path.basename(p) for p in paths)
    assert {'results.csv', 'summary.csv', 'timings.csv', 'true.csv', 'predicted.csv'} <= set(names)
    assert list(pd.read_csv(os.path.join(run_dir, 'results.csv')).columns) == ['b', 'T', 'g', 'stop_epoch']
    assert list(pd.read_csv(os.path.join(run_dir, 'timings.csv')).columns) == ['b', 'T', 'seconds']
    assert not dfs['AuditLog'].empty


def test_reporter_refuses_empty_result(tmp_path):
    result = run_sweep(tiny_config(), str(tmp_path / 'run'), trainer=CountingTrainer(fail=True))
    with pytest.raises(ValueError):
        ArtifactReporter(result, str(tmp_path / 'out')).run()


def test_loglog_svg_structure():
    summary = pd.DataFrame({'T': [250, 1000, 4000], 'G': [0.4, 0.1, 0.02], 'std': [0.1, 0.02, 0.01],
                            'stderr': [0.05, 0.01, 0.005], 'n': [4, 4, 4]})
    svg = render_loglog_svg(summary)
    assert svg.startswith('<svg')
    assert svg.count('class="point"') == 3
    assert svg.count('class="stderr"') == 3
    with pytest.raises(ValueError):
        render_loglog_svg(summary.assign(G=0.0))


@pytest.mark.slow
def test_desk_sweep_error_falls_with_sample_size(tmp_path):
    cfg = load_config(os.path.join(CONFIG_DIR, 'desk.toml'))
    result = run_sweep(cfg, str(tmp_path / 'desk'), workers=default_workers())
    assert result.complete
    G = result.summary.set_index('T')['G']
    assert G[2000] < G[250]
    assert result.slope < 0
