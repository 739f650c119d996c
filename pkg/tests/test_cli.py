import json
from pathlib import Path

import pytest

from ddic import __version__
from ddic.cli import main
from ddic.utils.config import ExperimentConfig
from ddic.utils.counts import CountTable

SAMPLE_COUNTS = str(Path(__file__).resolve().parent.parent / 'data' / 'ghz4_full_counts.csv')


@pytest.fixture
def ghz3_config(tmp_path):
    path = tmp_path / 'ghz3.yaml'
    path.write_text('state: ghz3\ncovering: full\ninequality: chsh\nseed: 4\n')
    return str(path)


def test_bounds_table(capsys):
    assert main(['bounds', '--n', '4', '--no-progress']) == 0
    out = capsys.readouterr().out
    assert '2.552285' in out
    assert '2.414214' in out


def test_bounds_json(capsys):
    assert main(['bounds', '--n', '3', '--format', 'json', '--inequality', 'tilted', '--theta-deg', '15',
                 '--beta-local', '0.952']) == 0
    rows = json.loads(capsys.readouterr().out)
    bounds = {row['family']: row['bound'] for row in rows}
    assert bounds['minimal'] == pytest.approx(0.976)
    assert bounds['full'] == pytest.approx(0.968)


def test_run_writes_json_report(ghz3_config, tmp_path):
    out = tmp_path / 'report.json'
    assert main(['run', '--config', ghz3_config, '--format', 'json', '--out', str(out), '--no-progress']) == 0
    report = json.loads(out.read_text())
    assert report['gme'] is True
    assert report['version'] == __version__
    assert report['seed'] == 4
    assert len(report['config_hash']) == 64


def test_run_table_and_seed_override(ghz3_config, capsys):
    assert main(['run', '--config', ghz3_config, '--seed', '9', '--no-progress']) == 0
    out = capsys.readouterr().out
    assert 'verdict     GME' in out
    assert 'P_GME' in out


def test_audit(capsys):
    assert main(['audit', '--n', '4', '--no-progress']) == 0
    assert '38 connected coverings, 0 below' in capsys.readouterr().out


def test_ingest_sample(capsys):
    assert main(['ingest', SAMPLE_COUNTS, '--format', 'json']) == 0
    report = json.loads(capsys.readouterr().out)
    assert report['beta_bar'] == pytest.approx(2.662)
    assert report['p_gme'] == pytest.approx(0.598, abs=1e-3)
    assert report['source'] == SAMPLE_COUNTS


def test_ingest_tilted_report_flags_local_bounds(capsys):
    assert main(['ingest', SAMPLE_COUNTS, '--inequality', 'tilted', '--theta-deg', '15']) == 0
    out = capsys.readouterr().out
    assert 'local bound configured 0.952000 differs from deterministic 0.995432' in out


def test_simulate_then_ingest(ghz3_config, tmp_path):
    table_path = tmp_path / 'counts.csv'
    assert main(['simulate', '--config', ghz3_config, '--shots', '2000', '--out', str(table_path),
                 '--no-progress']) == 0
    table = CountTable.from_csv(table_path)
    assert table.edges == [(0, 1), (0, 2), (1, 2)]
    assert main(['ingest', str(table_path)]) == 0


def test_states(ghz3_config, capsys):
    assert main(['states', '--config', ghz3_config, '--format', 'csv']) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == 'basis,real,imag'
    assert '111,' in out


def test_visibility(tmp_path, capsys):
    path = tmp_path / 'ghz4.yaml'
    path.write_text('state: ghz4\ncovering: full\n')
    assert main(['visibility', '--config', str(path), '--no-progress']) == 0
    out = capsys.readouterr().out
    assert 'critical visibility 0.85' in out
    assert ExperimentConfig.from_yaml(str(path)).config_hash() in out
    assert f'version     {__version__}' in out


def test_invalid_arguments_exit_with_one(capsys):
    assert main(['bounds']) == 1
    assert main(['ingest', SAMPLE_COUNTS, '--inequality', 'tilted']) == 1
    assert main(['run', '--config', 'does-not-exist.yaml']) == 1
    assert 'error:' in capsys.readouterr().err


def test_numerical_failure_exits_with_two(tmp_path, capsys):
    path = tmp_path / 'sep4.yaml'
    path.write_text('state: sep4\ncovering: full\nstrategy: ghz-x\n')
    assert main(['visibility', '--config', str(path), '--no-progress']) == 2
    assert 'numerical error' in capsys.readouterr().err
