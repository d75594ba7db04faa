"""
Scenario handlers.

Each handler takes a validated ScenarioConfig and the scenario output
directory, writes its CSV files and returns the figures of merit that go into
summary.json.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats

from core import constants as C
from core.nv_model import BiasField, NVEnsembleParams
from .analysis import (
    PsdResult,
    SensitivityReport,
    allan_sensitivity,
    average_psd,
    fluctuation_sensitivity,
    gaussian_fit,
    noise_floor,
    octave_taus,
    overlapping_allan,
    psd,
    residual_fluctuation,
    shot_noise_sensitivity,
    square_wave_levels,
)
from .config import ScenarioConfig
from .errors import ConfigError
from .field_profiles import (
    ConstantProfile,
    ReplayProfile,
    SquareProfile,
    elevator_profile,
    load_replay_csv,
    save_replay_csv,
)
from .lockin import lockin
from .pi_lock import (
    LockScenario,
    LoopRecord,
    acquire_lock,
    closed_loop_run,
    dynamic_range_experiment,
    locked_line_guess,
    open_loop_run,
)
from .signal_synth import coil_field, derive_seeds, synthesize
from .sweep_fit import calibrate_phase, fit_triplet, integrate_spectrum, odmr_sweep
from .timeseries import TimeSeries, write_csv

logger = logging.getLogger(__name__)


class Sensor:
    """Domain objects shared by every scenario, built once from the config."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.params = config.nv.build()
        self.bias = config.bias.build()
        self.axis_index = config.field.axis_index
        self.f_line = locked_line_guess(self.params, self.bias, self.axis_index)
        self.drive = config.drive.build(default_fc=self.f_line)
        self.det = config.detector.build()
        self.lockin_cfg = config.lockin.build(self.drive.fm)

    def zero_field(self) -> ConstantProfile:
        return ConstantProfile(0.0, axis_index=self.axis_index, bias=self.bias.vector)

    def noise(self, seed: int, duration: float = 0.0):
        return self.config.noise.build(seed, duration)

    def lock(self, gain_sign: float) -> LockScenario:
        """Lock point on the configured line, acquired at zero applied field."""
        scenario, _ = acquire_lock(self.params, self.drive, self.zero_field(),
                                   self.noise(self.config.seed), self.det, self.lockin_cfg,
                                   f_guess=self.drive.fc, gain_sign=gain_sign)
        return scenario


def _map_traces(fn: Callable, jobs: Sequence[Tuple], workers: int) -> List:
    """Run fn over jobs, in a process pool when workers > 1; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    logger.info(f"Running {len(jobs)} traces on {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def _open_loop_trace(scenario: LockScenario, duration: float, seed: int) -> LoopRecord:
    return open_loop_run(scenario.with_noise(scenario.noise.with_seed(seed)), duration)


def _open_loop_psd(scenario: LockScenario, duration: float, seed: int,
                   analysis, deembed_tau) -> PsdResult:
    record = _open_loop_trace(scenario, duration, seed)
    settle = C.SETTLE_TAUS * scenario.lockin_cfg.tau
    keep = record.time >= record.time[0] + settle
    ts = TimeSeries(float(record.time[keep][0]), record.dt, record.error[keep], 'V')
    return psd(ts, analysis.segments, analysis.overlap, analysis.window,
               zc_slope=scenario.zc_slope, gamma_e=scenario.params.gamma_e,
               lockin_tau=deembed_tau)


def _field_series(record: LoopRecord, values: np.ndarray, settle: float) -> TimeSeries:
    keep = record.time >= record.time[0] + settle
    return TimeSeries(float(record.time[keep][0]), record.dt, values[keep], 'T')


def _gain_sign(kp_native: float) -> float:
    return -1.0 if kp_native < 0 else 1.0


# ========== odmr ==========

def run_odmr(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    sensor = Sensor(config)
    field = config.field.build(sensor.bias, config.base_dir)
    cfg = sensor.lockin_cfg
    if config.lockin.phase is None:
        cfg = cfg.with_phase(calibrate_phase(sensor.params, sensor.drive, field, sensor.det,
                                             cfg, sensor.f_line))

    sweep = config.sweep
    spec = odmr_sweep(sensor.params, sensor.drive, field, sensor.noise(config.seed),
                      sensor.det, cfg, sweep.f_start, sweep.f_stop, sweep.n_points,
                      sweep.dwell)
    spec.to_csv(out_dir / 'spectrum.csv')

    fit = fit_triplet(spec, fdev=sensor.drive.fdev)
    write_csv(out_dir / 'integrated.csv', C.CSV_HEADER_INTEGRATED,
              [spec.freqs, integrate_spectrum(spec)])

    # lock-in noise at the fitted center
    record_seed = derive_seeds(config.seed, 2)[1]
    ts = synthesize(sensor.params, sensor.drive.with_carrier(fit.center), field,
                    sensor.noise(record_seed), sensor.det, sweep.noise_record)
    quad = lockin(ts, cfg).settled(cfg.tau)
    sigma = float(np.std(quad.i_phase.values))

    gamma_e = sensor.params.gamma_e
    esr = SensitivityReport.from_values(sigma, cfg.tau, abs(fit.max_slope), gamma_e)
    summary = {
        'center_hz': fit.center,
        'linewidth_hz': fit.gamma,
        'hf_split_hz': fit.hf_split,
        'amplitude_v': fit.amplitude,
        'baseline_v': fit.baseline,
        'residual_rms_v': fit.residual_rms,
        'max_slope_v_per_hz': fit.max_slope,
        'zc_slope_v_per_hz': fit.zc_slope,
        'phase_rad': cfg.phase,
        'lockin_sigma_v': sigma,
        'sensitivity_esr_T_rtHz': esr.eta,
        'esr': esr.to_dict(),
    }
    if 0 < sensor.params.contrast and sensor.params.photon_rate > 0:
        summary['sensitivity_shot_T_rtHz'] = shot_noise_sensitivity(
            gamma_e, sensor.params.linewidth, sensor.params.contrast, sensor.params.photon_rate)
    return summary


# ========== track ==========

def run_track(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    if config.field.kind != C.PROFILE_SQUARE:
        raise ConfigError("track needs a square field profile", 'field.kind', config.source)
    sensor = Sensor(config)
    track = config.track
    frequency = config.field.frequency
    scenario = sensor.lock(_gain_sign(config.pi.kp_native))
    square = SquareProfile(config.field.amplitude, frequency, axis_index=sensor.axis_index,
                           bias=sensor.bias.vector)
    scenario = scenario.with_field(square)

    seeds = derive_seeds(config.seed, track.n_traces)
    records = _map_traces(_open_loop_trace,
                          [(scenario, track.duration, s) for s in seeds], config.workers)

    traces = []
    for record in records:
        ts = _field_series(record, record.field_estimate, track.settle)
        traces.append(ts.values - np.mean(ts.values))
    first = _field_series(records[0], records[0].field_estimate, track.settle)
    mean_ts = first.with_values(np.mean(traces, axis=0))
    single_ts = first.with_values(traces[0])
    write_csv(out_dir / 'track.csv', C.CSV_HEADER_TRACK,
              [mean_ts.times, mean_ts.values, single_ts.values])

    settle = C.SETTLE_TAUS * scenario.lockin_cfg.tau
    high, low = square_wave_levels(mean_ts, frequency, settle=settle)
    amplitude = 0.5 * (high - low)

    residual = residual_fluctuation(single_ts, frequency, amplitude,
                                    offset=0.5 * (high + low), settle=settle)
    gauss = gaussian_fit(residual)
    tau = scenario.lockin_cfg.tau
    gamma_e = scenario.params.gamma_e
    sigma_v = gauss.sigma * abs(scenario.zc_slope) * gamma_e
    esr = SensitivityReport.from_values(sigma_v, tau, abs(scenario.zc_slope), gamma_e)
    return {
        'applied_amplitude_T': config.field.amplitude,
        'recovered_amplitude_T': amplitude,
        'n_traces': track.n_traces,
        'fluctuation_mean_T': gauss.mean,
        'fluctuation_sigma_T': gauss.sigma,
        'fluctuation_sigma_robust_T': gauss.sigma_robust,
        'fluctuation_flagged': gauss.flagged,
        'sensitivity_fluctuation_T_rtHz': fluctuation_sensitivity(gauss.sigma, tau),
        'sensitivity_esr_T_rtHz': esr.eta,
        'esr': esr.to_dict(),
        'zc_slope_v_per_hz': scenario.zc_slope,
    }


# ========== dynrange ==========

def run_dynrange(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    sensor = Sensor(config)
    dyn = config.dynrange
    scenario = sensor.lock(_gain_sign(dyn.kp_native))
    pi = scenario.pi_config(dyn.kp_native, dyn.ki_native, clamp=config.pi.clamp)
    result = dynamic_range_experiment(dyn.max_field, dyn.n_steps, scenario, pi, hold=dyn.hold,
                                      open_fdev=dyn.open_fdev)
    result.to_csv(out_dir / 'dynrange.csv')
    return {
        'range_open_T': result.range_open,
        'range_open_predicted_T': result.predicted_open,
        'open_fdev_hz': result.open_fdev,
        'range_closed_T': result.range_closed,
        'improvement': result.improvement,
        'clamp_hz': config.pi.clamp,
        'zc_slope_v_per_hz': scenario.zc_slope,
    }


# ========== allan ==========

def _allan_summary(ts: TimeSeries, config: ScenarioConfig, path: Path,
                   white_from: float) -> Dict[str, Any]:
    result = overlapping_allan(ts, octave_taus(ts), ci=config.analysis.confidence,
                               edf_mode=config.analysis.edf_mode)
    result.to_csv(path)
    best = int(np.argmin(result.adev))
    summary = {
        'min_adev': float(result.adev[best]),
        'tau_at_min_s': float(result.taus[best]),
        'sensitivity_T_rtHz': float(allan_sensitivity(result)[0]),
        'short_term_slope': None,
    }
    try:
        summary['short_term_slope'] = result.slope(white_from, 10 * white_from)
    except ValueError:
        logger.warning(f"Not enough taus for a slope above {white_from}s in {path.name}")
    return summary


def run_allan(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    sensor = Sensor(config)
    duration = config.allan.duration
    scenario = sensor.lock(_gain_sign(config.pi.kp_native))
    pi = scenario.pi_config(config.pi.kp_native, config.pi.ki_native, clamp=config.pi.clamp)
    settle = C.SETTLE_TAUS * scenario.lockin_cfg.tau
    gamma_e = scenario.params.gamma_e
    s_open, s_off, s_closed = derive_seeds(config.seed, 3)

    sensitive = open_loop_run(scenario.with_noise(sensor.noise(s_open, duration)), duration)
    detuned = replace(scenario, drive=scenario.drive.with_carrier(
        scenario.drive.fc + config.allan.detune))
    insensitive = open_loop_run(detuned.with_noise(sensor.noise(s_off, duration)), duration)
    closed = closed_loop_run(scenario.with_noise(sensor.noise(s_closed, duration)), pi, duration)
    closed.to_csv(out_dir / 'loop.csv')

    records = {
        'open_sensitive': _field_series(sensitive, sensitive.field_estimate, settle),
        'open_insensitive': _field_series(insensitive, insensitive.field_estimate, settle),
        'closed_pi': _field_series(closed, closed.field_estimate, settle),
        'closed_error': _field_series(
            closed, closed.error / (scenario.zc_slope * gamma_e), settle),
    }
    summary = {'locked': closed.locked, 'final_pi_output_hz': float(closed.pi_output[-1])}
    for name, ts in records.items():
        summary[name] = _allan_summary(ts, config, out_dir / f'allan_{name}.csv', 2 * settle)
    return summary


# ========== psd ==========

def run_psd(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    sensor = Sensor(config)
    cfg = config.psd
    analysis = config.analysis
    scenario = sensor.lock(_gain_sign(config.pi.kp_native))
    tau = scenario.lockin_cfg.tau
    deembed_tau = tau if analysis.deembed_lockin else None

    detuned = replace(scenario, drive=scenario.drive.with_carrier(scenario.drive.fc + cfg.detune))
    # no optical signal: only the electronic noise reaches the demodulator
    laser_off = replace(scenario, params=replace(scenario.params, contrast=0.0),
                        noise=replace(scenario.noise, shot_noise=False))
    cases = {'sensitive': scenario, 'insensitive': detuned, 'electronic': laser_off}

    summary: Dict[str, Any] = {'n_traces': cfg.n_traces}
    for (name, case), case_seed in zip(cases.items(), derive_seeds(config.seed, len(cases))):
        seeds = derive_seeds(case_seed, cfg.n_traces)
        jobs = [(case, cfg.duration, s, analysis, deembed_tau) for s in seeds]
        averaged = average_psd(_map_traces(_open_loop_psd, jobs, config.workers))
        averaged.to_csv(out_dir / f'psd_{name}.csv')
        floor = noise_floor(averaged, analysis.band_lo_hz, analysis.band_hi_hz)
        summary[name] = {
            'floor_T2_per_Hz': floor.mean_psd,
            'sensitivity_T_rtHz': floor.sensitivity,
        }

    # ESR sensitivity of one sensitive trace, to cross-check the PSD floor
    record = _open_loop_trace(scenario, cfg.duration, derive_seeds(config.seed, 4)[3])
    settled = record.error[record.time >= record.time[0] + C.SETTLE_TAUS * tau]
    esr = SensitivityReport.from_values(float(np.std(settled)), tau, abs(scenario.zc_slope),
                                        scenario.params.gamma_e)
    summary['sensitivity_esr_T_rtHz'] = esr.eta
    summary['esr'] = esr.to_dict()
    summary['zc_slope_v_per_hz'] = scenario.zc_slope
    return summary


# ========== replay ==========

def smooth_estimate(estimate: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing of a measured trace; sigma counts control-period samples."""
    if sigma <= 0:
        return np.asarray(estimate, dtype=float)
    return ndimage.gaussian_filter1d(np.asarray(estimate, dtype=float), sigma)


def run_replay(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    sensor = Sensor(config)
    rep = config.replay
    if rep.csv:
        path = Path(rep.csv)
        if config.base_dir is not None and not path.is_absolute():
            path = config.base_dir / path
        samples = load_replay_csv(path)
    else:
        samples = elevator_profile(rep.duration, rep.dt, rep.peak, rep.blip)
    save_replay_csv(out_dir / 'replay_input.csv', samples)

    scenario = sensor.lock(_gain_sign(config.pi.kp_native))
    profile = ReplayProfile(samples, axis_index=sensor.axis_index, bias=sensor.bias.vector)
    pi = scenario.pi_config(config.pi.kp_native, config.pi.ki_native, clamp=config.pi.clamp)
    record = closed_loop_run(scenario.with_field(profile), pi, samples.duration)
    record.to_csv(out_dir / 'loop.csv')
    estimate = smooth_estimate(record.field_estimate, rep.smooth_sigma)
    write_csv(out_dir / 'replay.csv', C.CSV_HEADER_REPLAY, [record.time, estimate])

    applied = profile.scalar_field(record.time)
    settle = C.SETTLE_TAUS * scenario.lockin_cfg.tau
    keep = record.time >= record.time[0] + settle
    tracking = estimate[keep] - applied[keep]
    raw = record.field_estimate[keep] - applied[keep]
    return {
        'locked': record.locked,
        'duration_s': samples.duration,
        'peak_applied_T': float(np.max(np.abs(samples.values))),
        'peak_measured_T': float(np.max(np.abs(estimate[keep]))),
        'tracking_rms_T': float(np.sqrt(np.mean(tracking ** 2))),
        'tracking_rms_raw_T': float(np.sqrt(np.mean(raw ** 2))),
        'smooth_sigma_samples': rep.smooth_sigma,
    }


# ========== calibrate ==========

def run_calibrate(config: ScenarioConfig, out_dir: Path) -> Dict[str, Any]:
    cal = config.calibration
    currents = np.asarray(cal.currents, dtype=float)
    if len(currents) < 5:
        raise ConfigError(f"a calibration sweep needs at least 5 currents, got {len(currents)}",
                          'calibration.currents', config.source)
    if np.ptp(currents) == 0:
        raise ConfigError("calibration currents are all equal", 'calibration.currents',
                          config.source)

    sensor = Sensor(config)
    params: NVEnsembleParams = sensor.params
    cfg = sensor.lockin_cfg
    if config.lockin.phase is None:
        cfg = cfg.with_phase(calibrate_phase(params, sensor.drive, sensor.zero_field(),
                                             sensor.det, cfg, sensor.f_line))

    centers = np.empty(len(currents))
    for k, (current, seed) in enumerate(zip(currents, derive_seeds(config.seed, len(currents)))):
        coil = coil_field(current, cal.coil_constant, axis_index=sensor.axis_index,
                          bias=sensor.bias.vector)
        total = BiasField(tuple(coil.vectors(np.zeros(1), params.axes_array)[0]))
        guess = locked_line_guess(params, total, sensor.axis_index)
        spec = odmr_sweep(params, sensor.drive, coil, sensor.noise(seed), sensor.det, cfg,
                          guess - 0.5 * cal.span, guess + 0.5 * cal.span, cal.n_points,
                          cal.dwell)
        centers[k] = fit_triplet(spec, fdev=sensor.drive.fdev).center
        logger.debug(f"I={current:+.3f} A -> center {centers[k] / 1e9:.7f} GHz")
    write_csv(out_dir / 'calibration.csv', C.CSV_HEADER_CALIBRATION, [currents, centers])

    fit = stats.linregress(currents, centers)
    slope_hz = abs(float(fit.slope))
    logger.info(f"Coil calibration: {slope_hz / 1e3:.2f} kHz/A, "
                f"{slope_hz / params.gamma_e * 1e6:.3f} uT/A")
    return {
        'slope_hz_per_a': slope_hz,
        'slope_signed_hz_per_a': float(fit.slope),
        'slope_T_per_a': slope_hz / params.gamma_e,
        'intercept_hz': float(fit.intercept),
        'r_value': float(fit.rvalue),
        'stderr_hz_per_a': float(fit.stderr),
    }


SCENARIOS: Dict[str, Callable[[ScenarioConfig, Path], Dict[str, Any]]] = {
    C.SCENARIO_ODMR: run_odmr,
    C.SCENARIO_TRACK: run_track,
    C.SCENARIO_DYNRANGE: run_dynrange,
    C.SCENARIO_ALLAN: run_allan,
    C.SCENARIO_PSD: run_psd,
    C.SCENARIO_REPLAY: run_replay,
    C.SCENARIO_CALIBRATE: run_calibrate,
}
