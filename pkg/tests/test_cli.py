import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from nfar.cli import cli
from nfar.dynamics import load_path


def invoke(*args):
    result = CliRunner().invoke(cli, [str(a) for a in args])
    return result


def test_check_embedding_prints_json():
    result = invoke('check-embedding', '--grid-size', 8)
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report['grid_size'] == 8
    assert report['lambda_min_clamped'] >= 0


def test_check_embedding_keeps_clamp_warning_off_stdout():
    result = invoke('check-embedding', '--grid-size', 100)
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report['clamp_count'] > 0
    assert report['lambda_min_clamped'] >= 0
    assert report['warnings'] and 'Clamped' in report['warnings'][0]
    assert 'WARNING: Clamped' in result.stderr


def test_check_embedding_strict_failure():
    result = invoke('check-embedding', '--grid-size', 8, '--scale', 0.05, '--policy', 'strict')
    assert result.exit_code != 0
    assert 'Error' in result.output


def test_simulate_then_train_then_evaluate(tmp_path, tiny_toml):
    data = tmp_path / 'path'
    result = invoke('simulate', '--seed', 1, '--grid-size', 4, '--length', 10, '--burn-in', 5, '--out', data)
    assert result.exit_code == 0, result.output
    path = load_path(str(data))
    assert len(path) == 10 and path.grid.size == 4

    ckpt = tmp_path / 'net.json'
    trace = tmp_path / 'trace.csv'
    result = invoke('train', '--data', data, '--config', tiny_toml, '--out', ckpt, '--trace', trace, '--seed', 5)
    assert result.exit_code == 0, result.output
    assert 'Stopped at epoch' in result.output
    assert json.loads(ckpt.read_text())['seed'] == 5
    assert list(pd.read_csv(trace).columns) == ['epoch', 'train_loss', 'val_loss', 'seconds']

    result = invoke('evaluate', '--checkpoint', ckpt, '--config', tiny_toml, '--test-seed', 2)
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report['g'] >= 0
    assert report['checkpoint'] == 'net.json'


def test_simulate_snapshots(tmp_path):
    out = tmp_path / 'snaps'
    result = invoke('simulate', '--grid-size', 4, '--length', 6, '--burn-in', 0, '--snapshots', '2,6', '--out', out)
    assert result.exit_code == 0, result.output
    assert sorted(os.listdir(out)) == ['frame_00002.csv', 'frame_00006.csv', 'meta.json']

    bad = invoke('simulate', '--grid-size', 4, '--length', 6, '--snapshots', 'x', '--out', out)
    assert bad.exit_code != 0


def test_train_refuses_snapshot_directory(tmp_path, tiny_toml):
    out = tmp_path / 'snaps'
    invoke('simulate', '--grid-size', 4, '--length', 6, '--burn-in', 0, '--snapshots', '2', '--out', out)
    result = invoke('train', '--data', out, '--config', tiny_toml, '--out', tmp_path / 'x.json')
    assert result.exit_code != 0
    assert 'snapshots' in result.output


def test_check_conditions_writes_report(tmp_path):
    out = tmp_path / 'report.json'
    result = invoke('check-conditions', '--grid-size', 6, '--length', 40, '--burn-in', 5, '--m-terms', 8,
                    '--max-lag', 2, '--out', out)
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    assert len(report['partial_sums']) == 8
    assert report['mixing'] is not None


def test_check_conditions_grid_limit():
    result = invoke('check-conditions', '--grid-size', 41, '--length', 40, '--max-lag', 2)
    assert result.exit_code != 0


def test_sweep_command(tmp_path, tiny_toml, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / 'run'
    result = invoke('sweep', '--config', tiny_toml, '--out', out, '--workers', 1)
    assert result.exit_code == 0, result.output
    assert 'log-log slope' in result.output
    for name in ('results.csv', 'summary.csv', 'timings.csv', 'loglog.svg', 'true.csv', 'predicted.csv'):
        assert os.path.exists(out / name), name

    rerun = invoke('sweep', '--config', tiny_toml, '--out', out, '--workers', 1)
    assert rerun.exit_code == 0
    assert '4 of 4 cells already done' in rerun.output


def test_simulate_defaults_to_data_directory(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    result = invoke('simulate', '--grid-size', 4, '--length', 3, '--burn-in', 0)
    assert result.exit_code == 0, result.output
    assert (tmp_path / 'data' / 'path_S4_seed0' / 'meta.json').exists()


def test_check_conditions_emits_strict_json_for_unbounded_tau(tmp_path):
    config = tmp_path / 'linear.toml'
    config.write_text('[model]\nnonlinearity = "identity"\namplitude = 0.1\n')
    out = tmp_path / 'report.json'
    result = invoke('check-conditions', '--grid-size', 6, '--length', 40, '--burn-in', 5, '--m-terms', 8,
                    '--max-lag', 2, '--config', config, '--out', out)
    assert result.exit_code == 0, result.output
    for text in (result.stdout, out.read_text()):
        assert 'Infinity' not in text and 'NaN' not in text
        report = json.loads(text, parse_constant=lambda name: pytest.fail(f"non-standard JSON constant {name}"))
        assert report['drift']['tau_growth'] == 'linear'
        assert report['drift']['tau_sup'] is None
