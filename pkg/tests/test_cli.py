import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from core.constants import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUNTIME_ERROR
from qmagpi.cli import build_parser, main
from qmagpi.config import parse_config
from qmagpi.runner import ScenarioRunner, resolve_output_root
from qmagpi.scenarios import smooth_estimate

CALIBRATION = {
    'scenario': 'calibrate',
    'seed': 7,
    'noise': {'shot_noise': False, 'electronic_psd': 0.0},
    'calibration': {'coil_constant': 4.889e-6, 'currents': [-2.0, -1.0, 0.0, 1.0, 2.0]},
}


def _config(tmp_path, data, name='scenario.json'):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def _summary(out: Path, scenario: str):
    return json.loads((out / scenario / 'summary.json').read_text())


def test_no_command_prints_help(capsys):
    assert main([]) == EXIT_CONFIG_ERROR
    assert 'usage' in capsys.readouterr().out


def test_parser_has_every_scenario():
    parser = build_parser()
    for command in ('odmr', 'track', 'dynrange', 'allan', 'psd', 'replay', 'calibrate', 'run'):
        args = parser.parse_args([command, '--config', 'x.json', '--seed', '5'])
        assert args.seed == 5


def test_missing_key_exit_code(tmp_path, capsys):
    path = _config(tmp_path, {'seed': 1})
    assert main(['run', '--config', path, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG_ERROR
    assert "'scenario'" in capsys.readouterr().err


def test_module_entry_point_exit_code(tmp_path):
    path = _config(tmp_path, {'seed': 1})
    root = Path(__file__).resolve().parent.parent
    proc = subprocess.run(
        [sys.executable, '-m', 'qmagpi', 'run', '--config', path, '--out', str(tmp_path / 'out')],
        cwd=root, capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_CONFIG_ERROR
    assert "'scenario'" in proc.stderr


def test_unknown_key_exit_code(tmp_path, capsys):
    path = _config(tmp_path, {'scenario': 'odmr', 'sweep': {'points': 10}})
    assert main(['odmr', '--config', path]) == EXIT_CONFIG_ERROR
    assert 'sweep.points' in capsys.readouterr().err


def test_bad_seed_override(tmp_path):
    path = _config(tmp_path, CALIBRATION)
    assert main(['calibrate', '--config', path, '--seed', str(2 ** 64)]) == EXIT_CONFIG_ERROR


def test_track_requires_square_field(tmp_path, capsys):
    path = _config(tmp_path, {'scenario': 'track'})
    assert main(['track', '--config', path, '--out', str(tmp_path / 'out')]) == EXIT_CONFIG_ERROR
    assert 'field.kind' in capsys.readouterr().err


def test_short_calibration_sweep(tmp_path):
    data = dict(CALIBRATION, calibration={'currents': [0.0, 1.0]})
    path = _config(tmp_path, data)
    out = str(tmp_path / 'out')
    assert main(['calibrate', '--config', path, '--out', out]) == EXIT_CONFIG_ERROR


def test_runtime_failure_writes_manifest(tmp_path, capsys):
    path = _config(tmp_path, {'scenario': 'replay', 'replay': {'csv': 'absent.csv'}})
    out = tmp_path / 'out'
    assert main(['replay', '--config', path, '--out', str(out)]) == EXIT_RUNTIME_ERROR
    manifest = json.loads((out / 'replay' / 'manifest.json').read_text())
    assert manifest['status'] == 'Failed'
    assert 'absent.csv' in manifest['remark']
    assert 'replay failed' in capsys.readouterr().err


def test_output_root_precedence(monkeypatch):
    config = parse_config({'scenario': 'odmr', 'output_dir': 'from_config'})
    monkeypatch.delenv('QMAGPI_OUT', raising=False)
    assert resolve_output_root(None, parse_config({'scenario': 'odmr'})) == Path('qmagpi_out')
    assert resolve_output_root(None, config) == Path('from_config')
    monkeypatch.setenv('QMAGPI_OUT', 'from_env')
    assert resolve_output_root(None, config) == Path('from_env')
    assert resolve_output_root('from_flag', config) == Path('from_flag')


def test_info(capsys):
    assert main(['info', '--json']) == EXIT_OK
    assert '"libraries"' in capsys.readouterr().out


def test_validate(tmp_path):
    assert main(['validate', '--config', _config(tmp_path, CALIBRATION)]) == EXIT_OK
    bad = _config(tmp_path, {'scenario': 'odmr', 'nv': {'contrast': 2.0}}, 'bad.json')
    assert main(['validate', '--config', bad]) == EXIT_CONFIG_ERROR


@pytest.mark.slow
def test_calibrate_recovers_coil_slope(tmp_path):
    path = _config(tmp_path, CALIBRATION)
    first, second = tmp_path / 'a', tmp_path / 'b'
    assert main(['calibrate', '--config', path, '--out', str(first)]) == EXIT_OK
    summary = _summary(first, 'calibrate')
    assert summary['slope_hz_per_a'] == pytest.approx(137.0e3, rel=0.01)
    assert summary['slope_T_per_a'] == pytest.approx(4.889e-6, rel=0.01)

    manifest = json.loads((first / 'calibrate' / 'manifest.json').read_text())
    assert manifest['status'] == 'Complete'
    assert manifest['seed'] == 7
    assert manifest['config']['calibration']['coil_constant'] == 4.889e-6

    # reruns reproduce the CSV byte for byte
    assert main(['calibrate', '--config', path, '--out', str(second)]) == EXIT_OK
    assert (first / 'calibrate' / 'calibration.csv').read_bytes() == \
        (second / 'calibrate' / 'calibration.csv').read_bytes()


@pytest.mark.slow
@pytest.mark.parametrize('coil_constant, expected', [(0.0, 0.0), (2 * 4.889e-6, 274.0e3)])
def test_calibrate_scales_with_coil_constant(tmp_path, coil_constant, expected):
    data = dict(CALIBRATION, calibration=dict(CALIBRATION['calibration'],
                                              coil_constant=coil_constant))
    out = tmp_path / 'out'
    assert main(['calibrate', '--config', _config(tmp_path, data), '--out', str(out)]) == EXIT_OK
    assert _summary(out, 'calibrate')['slope_hz_per_a'] == pytest.approx(expected, rel=0.01,
                                                                          abs=1.0)


@pytest.mark.slow
def test_track_averages_one_hundred_traces(tmp_path):
    data = {
        'scenario': 'track',
        'seed': 2,
        'workers': 4,
        'field': {'kind': 'square', 'amplitude': 50e-9, 'frequency': 2.0},
        'track': {'n_traces': 100, 'duration': 2.0, 'settle': 0.125},
    }
    summary = ScenarioRunner(parse_config(data), tmp_path / 'out').run()
    assert summary['n_traces'] == 100
    assert summary['recovered_amplitude_T'] == pytest.approx(50e-9, rel=0.1)
    assert summary['fluctuation_sigma_robust_T'] == pytest.approx(
        summary['fluctuation_sigma_T'], rel=0.05)
    assert not summary['fluctuation_flagged']


@pytest.mark.slow
def test_track_fluctuation_follows_electronic_noise(tmp_path):
    sigmas = []
    for psd_scale in (1.0, 4.0):
        data = {
            'scenario': 'track',
            'seed': 2,
            'noise': {'shot_noise': False, 'electronic_psd': psd_scale * 4.5e-12},
            'field': {'kind': 'square', 'amplitude': 50e-9, 'frequency': 2.0},
            'track': {'n_traces': 1, 'duration': 4.0, 'settle': 0.125},
        }
        summary = ScenarioRunner(parse_config(data), tmp_path / str(psd_scale)).run()
        sigmas.append(summary['fluctuation_sigma_T'])
    assert sigmas[1] / sigmas[0] == pytest.approx(2.0, rel=0.05)


@pytest.mark.slow
def test_track_is_worker_independent(tmp_path):
    data = {
        'scenario': 'track',
        'seed': 2,
        'noise': {'shot_noise': True, 'electronic_psd': 0.0},
        'field': {'kind': 'square', 'amplitude': 50e-9, 'frequency': 2.0},
        'track': {'n_traces': 2, 'duration': 2.0, 'settle': 0.125},
    }
    serial = ScenarioRunner(parse_config(data), tmp_path / 'serial')
    pooled = ScenarioRunner(parse_config(dict(data, workers=2)), tmp_path / 'pooled')
    summary = serial.run()
    pooled.run()
    assert summary['recovered_amplitude_T'] == pytest.approx(50e-9, rel=0.1)
    serial_csv = (serial.out_dir / 'track.csv').read_bytes()
    assert serial_csv == (pooled.out_dir / 'track.csv').read_bytes()


@pytest.mark.slow
def test_odmr_scenario_linewidth(tmp_path):
    out = tmp_path / 'out'
    path = _config(tmp_path, {'scenario': 'odmr', 'seed': 1})
    assert main(['odmr', '--config', path, '--out', str(out)]) == EXIT_OK
    summary = _summary(out, 'odmr')
    assert summary['linewidth_hz'] == pytest.approx(1.0e6, rel=0.05)
    assert summary['hf_split_hz'] == pytest.approx(2.158e6, rel=0.02)
    for name in ('spectrum.csv', 'integrated.csv', 'manifest.json'):
        assert (out / 'odmr' / name).exists()


def test_smooth_estimate(rng):
    trace = 3e-6 + rng.normal(0.0, 1e-8, 20000)
    smoothed = smooth_estimate(trace, 50.0)
    assert np.mean(smoothed) == pytest.approx(3e-6, rel=1e-4)
    # white noise through a unit-area Gaussian of width s keeps 1/sqrt(2 sqrt(pi) s)
    assert np.std(smoothed) == pytest.approx(1e-8 / np.sqrt(2 * np.sqrt(np.pi) * 50.0), rel=0.2)
    np.testing.assert_array_equal(smooth_estimate(trace, 0.0), trace)


@pytest.mark.slow
def test_replay_tracks_elevator(tmp_path):
    out = tmp_path / 'out'
    path = _config(tmp_path, {
        'scenario': 'replay',
        'seed': 6,
        'lockin': {'tau': 0.04},
        'pi': {'kp_native': -200.0, 'ki_native': -200.0},
        'replay': {'duration': 10.0, 'dt': 0.01, 'peak': 5e-6, 'blip': 1.5e-6,
                   'smooth_sigma': 50.0},
    })
    assert main(['replay', '--config', path, '--out', str(out)]) == EXIT_OK
    summary = _summary(out, 'replay')
    assert summary['locked']
    assert summary['tracking_rms_T'] < 0.05 * 5e-6
    assert summary['tracking_rms_T'] <= summary['tracking_rms_raw_T']
    assert summary['peak_measured_T'] == pytest.approx(summary['peak_applied_T'], rel=0.1)
