from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner, Result

from launcher import main
from stages.utils.constants import FEATURE_NAMES

ENV = {'SOURCE_DATE_EPOCH': '1700000000'}


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner(mix_stderr=False)


def invoke(runner: CliRunner, *args: str) -> Result:
    return runner.invoke(main, list(args), env=ENV, catch_exceptions=False)


def write_spec(path: str, **mapping) -> str:
    Path(path).write_text(json.dumps(mapping), encoding='utf-8')
    return path


def run_pipeline(runner: CliRunner) -> dict[str, bytes]:
    assert invoke(runner, 'simulate', '--reference', '--out', 'sim', '-n', '12', '--seed', '3').exit_code == 0
    assert invoke(runner, 'train', 'sim/runner1/run1', 'sim/runner1/run2', '-n', '12', '-o', 'model.json').exit_code == 0
    result = invoke(
        runner, 'classify', 'model.json', 'sim/runner1/run3', '--truth', 'sim/runner1/run3/speeds.csv', '-o', 'estimates.csv',
    )
    assert result.exit_code == 0, result.output
    return {name: Path(name).read_bytes() for name in ('model.json', 'estimates.csv', 'sim/runner2/run1/features.csv')}


def test_full_pipeline_is_byte_identical(runner: CliRunner):
    with runner.isolated_filesystem():
        first = run_pipeline(runner)
    with runner.isolated_filesystem():
        second = run_pipeline(runner)
    assert first == second


def test_train_classify_evaluate(runner: CliRunner):
    with runner.isolated_filesystem():
        assert invoke(runner, 'simulate', '--reference', '--out', 'sim', '-n', '12').exit_code == 0

        result = invoke(runner, 'train', 'sim/runner2/run1', 'sim/runner2/run2', '-n', '12', '--runner', 'runner2')
        assert result.exit_code == 0, result.output
        assert result.output.startswith('Selected')
        assert json.loads(Path('model.json').read_text(encoding='utf-8'))['profile']['mass'] == 52.0

        result = invoke(runner, 'classify', 'model.json', 'sim/runner2/run3', '--lag', '2', '--verify')
        assert result.exit_code == 0, result.output
        header = result.output.splitlines()[0]
        assert header == 'step,k_hat,distance_m,energy_J,fatigue_pct'

        result = invoke(
            runner, 'classify', 'model.json', 'sim/runner2/run3', '--truth', 'sim/runner2/run3/speeds.csv', '--sweep',
        )
        assert result.exit_code == 0, result.output
        assert 'Lag 0' in result.output
        assert 'Lag 4' in result.output

        result = invoke(runner, 'evaluate', 'model.json', 'sim/runner2/run3', 'sim/runner2/run1', '--csv', 'lags.csv')
        assert result.exit_code == 0, result.output
        assert 'Mean' in result.output
        assert Path('lags.csv').read_text(encoding='utf-8').startswith('run,lag_0,lag_1,lag_2,lag_3,lag_4')


def test_missing_sensor_file_exits_with_input_error(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=4, output='raw', runs=1)
        assert invoke(runner, 'simulate', spec, '--out', 'raw').exit_code == 0

        result = invoke(runner, 'features', 'raw/run1', '-n', '4')
        assert result.exit_code == 0, result.output
        assert result.output.splitlines()[0] == ','.join(['k', *FEATURE_NAMES])
        assert len(result.output.splitlines()) == 5

        Path('raw/run1/ankle.csv').unlink()
        result = invoke(runner, 'features', 'raw/run1', '-n', '4')
        assert result.exit_code == 3
        assert 'ankle' in result.stderr


def test_undecodable_recording_exits_with_parse_error(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=4, output='raw', runs=1)
        assert invoke(runner, 'simulate', spec, '--out', 'raw').exit_code == 0

        knee = Path('raw/run1/knee.csv')
        knee.write_bytes(knee.read_bytes() + b'\xff\n')
        result = invoke(runner, 'features', 'raw/run1', '-n', '4')
        assert result.exit_code == 2
        assert 'ParseError' in result.stderr
        assert 'knee.csv' in result.stderr


def test_lag_outside_the_run_exits_with_validation_error(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=8, slopes=0.3, noise_std=0.2)
        invoke(runner, 'simulate', spec, '--out', 'sim')
        assert invoke(runner, 'train', 'sim/run1', 'sim/run2', '-n', '8').exit_code == 0

        result = invoke(runner, 'classify', 'model.json', 'sim/run3', '--lag', '8')
        assert result.exit_code == 2
        assert 'LagError' in result.stderr


def test_degenerate_feature_exits_with_numerical_error(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=6, noise_std=0.0, runs=2)
        invoke(runner, 'simulate', spec, '--out', 'flat')

        result = invoke(runner, 'train', 'flat/run1', 'flat/run2', '-n', '6')
        assert result.exit_code == 4
        assert 'DegenerateFeatureError' in result.stderr


def test_sweep_needs_truth(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=8, slopes=0.3, noise_std=0.2)
        invoke(runner, 'simulate', spec, '--out', 'sim')
        invoke(runner, 'train', 'sim/run1', 'sim/run2', '-n', '8')

        result = invoke(runner, 'classify', 'model.json', 'sim/run3', '--sweep')
        assert result.exit_code == 2
        assert '--truth' in result.stderr


def test_settings_file_supplies_option_defaults(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=8, slopes=0.3, noise_std=0.2)
        invoke(runner, 'simulate', spec, '--out', 'sim')
        invoke(runner, 'train', 'sim/run1', 'sim/run2', '-n', '8')
        explicit = invoke(runner, 'classify', 'model.json', 'sim/run3', '--lag', '0').output

        write_spec('stride.json', classify={'lag': 0})
        assert invoke(runner, 'classify', 'model.json', 'sim/run3').output == explicit

        write_spec('stride.json', classify={'lag': 8})
        assert invoke(runner, 'classify', 'model.json', 'sim/run3').exit_code == 2

        write_spec('other.json', train={'select': 'argmax', 'segments': 8})
        result = invoke(runner, '--config', 'other.json', 'train', 'sim/run1', 'sim/run2', '-o', 'argmax.json')
        assert result.exit_code == 0, result.output
        assert json.loads(Path('argmax.json').read_text(encoding='utf-8'))['relevance']['mode'] == 'argmax'


@pytest.mark.parametrize(
    'settings',
    [{'classify': {'lagg': 1}}, {'plot': {}}, {'train': 3}],
)
def test_invalid_settings_exit_with_config_error(runner: CliRunner, settings: dict):
    with runner.isolated_filesystem():
        Path('stride.json').write_text(json.dumps(settings), encoding='utf-8')
        result = invoke(runner, 'bench', '--repeat', '1', '-n', '8')
        assert result.exit_code == 2
        assert 'ConfigError' in result.stderr


def test_missing_config_file(runner: CliRunner):
    with runner.isolated_filesystem():
        result = invoke(runner, '--config', 'absent.json', 'bench', '--repeat', '1')
        assert result.exit_code == 3


def test_select_and_energy_commands(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=8, slopes=0.3, noise_std=0.2, speeds=3.0)
        invoke(runner, 'simulate', spec, '--out', 'sim')

        result = invoke(runner, 'select', 'sim/run1', 'sim/run2', '-n', '8', '--csv', 'selection.csv')
        assert result.exit_code == 0, result.output
        assert result.output.startswith('Selected')
        assert Path('selection.csv').read_text(encoding='utf-8').startswith('feature,name,d,d_bar,rank,selected')

        result = invoke(runner, 'energy', 'sim/run1/speeds.csv', '--runner', 'runner1')
        assert result.exit_code == 0, result.output
        lines = result.output.splitlines()
        assert lines[0] == 'k,speed_mps,distance_m,energy_J,fatigue_pct'
        assert lines[1] == '1,3.000000,113.600000,405.000000,12.500000'
        assert lines[-1].endswith(',100.000000')


def test_bench_reports_the_median(runner: CliRunner):
    result = invoke(runner, 'bench', '--repeat', '5', '--lag', '4')
    assert result.exit_code == 0, result.output
    assert 'median' in result.output


def test_log_file(runner: CliRunner):
    with runner.isolated_filesystem():
        spec = write_spec('spec.json', segments=8, slopes=0.3, noise_std=0.2)
        result = invoke(runner, '--log-level', 'debug', '--log-file', 'stride.log', 'simulate', spec, '--out', 'sim')
        assert result.exit_code == 0, result.output
        assert 'Simulated 3 runs' in Path('stride.log').read_text(encoding='utf-8')
