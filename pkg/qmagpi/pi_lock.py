"""
PI resonance lock and the open-loop / closed-loop dynamic-range experiment.

The lock-in in-phase output is the discriminator: near the locked line it reads
I = zc_slope * (carrier - line). The controller steers the carrier offset so that
I returns to the setpoint; the offset divided by gamma_e is the field estimate.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from core.constants import (
    CSV_HEADER_DYNRANGE,
    CSV_HEADER_LOOP,
    LINEARITY_TOLERANCE,
    LOCK_FLOOR_FRACTION,
    LOCK_LOSS_FACTOR,
    LOCK_LOSS_PERIODS,
    LOCK_REFERENCE_PERIODS,
    PI_CLAMP_HZ,
    PI_KI_NATIVE_SCALE,
    PI_KP_NATIVE_SCALE,
    SETTLE_TAUS,
)
from core.nv_model import NVEnsembleParams, resonance_frequencies, BiasField
from .field_profiles import ConstantProfile, FieldProfile, ReplayProfile, staircase_profile
from .lockin import LockIn, LockinConfig, decimation_factor
from .signal_synth import (
    DetectorConfig,
    FmDriveConfig,
    NoiseConfig,
    SignalSynthesizer,
    derive_seeds,
    synthesize,
)
from .sweep_fit import (
    DerivLorentzianFit,
    calibrate_phase,
    fit_triplet,
    measure_discriminator_slope,
    odmr_sweep,
    settled_lockin_mean,
)
from .timeseries import write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PIConfig:
    kp: float
    ki: float
    dt: float
    setpoint: float = 0.0
    clamp: float = PI_CLAMP_HZ

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"control period dt must be positive, got {self.dt}")
        if not self.clamp > 0:
            raise ValueError(f"clamp must be positive, got {self.clamp}")
        if not (np.isfinite(self.kp) and np.isfinite(self.ki) and np.isfinite(self.setpoint)):
            raise ValueError("PI gains and setpoint must be finite")

    @classmethod
    def from_native(cls, kp: float, ki: float, zc_slope: float, dt: float,
                    clamp: float = PI_CLAMP_HZ, setpoint: float = 0.0) -> 'PIConfig':
        """
        Convert instrument-native gains to Hz/V.

        Native kp is the loop gain per 10 mV-equivalent of error and native ki the
        integral rate per second, both normalized by the discriminator slope.
        """
        if zc_slope == 0 or not np.isfinite(zc_slope):
            raise ValueError("discriminator slope must be finite and non-zero")
        scale = 1.0 / abs(zc_slope)
        return cls(kp=kp * PI_KP_NATIVE_SCALE * scale, ki=ki * PI_KI_NATIVE_SCALE * scale,
                   dt=dt, setpoint=setpoint, clamp=clamp)

    def loop_gains(self, zc_slope: float) -> Tuple[float, float]:
        """Dimensionless proportional gain and integral rate (1/s) of the loop."""
        return self.kp * zc_slope, self.ki * zc_slope


@dataclass(frozen=True)
class PIState:
    integrator: float = 0.0
    last_output: float = 0.0


def pi_step(state: PIState, measurement: float, cfg: PIConfig) -> Tuple[PIState, float]:
    """
    One controller update with conditional-integration anti-windup.

    Raises:
        ValueError: non-finite measurement (the passed state is not modified)
    """
    if not np.isfinite(measurement):
        raise ValueError(f"non-finite PI measurement: {measurement}")

    e = cfg.setpoint - measurement
    increment = cfg.ki * e * cfg.dt
    candidate = cfg.kp * e + state.integrator + increment
    integrator = state.integrator
    if abs(candidate) <= cfg.clamp:
        integrator = min(max(integrator + increment, -cfg.clamp), cfg.clamp)
    output = min(max(candidate, -cfg.clamp), cfg.clamp)
    return PIState(integrator, output), output


@dataclass(frozen=True)
class LoopRecord:
    time: np.ndarray
    error: np.ndarray
    pi_output: np.ndarray
    field_estimate: np.ndarray
    locked: bool = True
    closed_loop: bool = True

    def __post_init__(self):
        n = len(self.time)
        if not (len(self.error) == len(self.pi_output) == len(self.field_estimate) == n):
            raise ValueError("loop record columns must have equal lengths")
        if not np.all(np.isfinite(self.field_estimate)):
            raise ValueError("field estimate must be finite")

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0]) if len(self.time) > 1 else 0.0

    def to_csv(self, path: Union[str, Path]):
        return write_csv(path, CSV_HEADER_LOOP,
                         [self.time, self.error, self.pi_output, self.field_estimate])


@dataclass(frozen=True)
class LockScenario:
    """Everything the loop needs: sensor, drive at the locked carrier, chain and slope."""

    params: NVEnsembleParams
    drive: FmDriveConfig
    field: FieldProfile
    noise: NoiseConfig
    det: DetectorConfig
    lockin_cfg: LockinConfig
    zc_slope: float
    setpoint: float = 0.0

    @property
    def sample_rate(self) -> float:
        return self.det.rate_for(self.drive)

    @property
    def control_dt(self) -> float:
        return decimation_factor(self.sample_rate, self.lockin_cfg.out_rate) / self.sample_rate

    def with_field(self, field: FieldProfile) -> 'LockScenario':
        return replace(self, field=field)

    def with_noise(self, noise: NoiseConfig) -> 'LockScenario':
        return replace(self, noise=noise)

    def pi_config(self, kp_native: float, ki_native: float,
                  clamp: float = PI_CLAMP_HZ) -> PIConfig:
        return PIConfig.from_native(kp_native, ki_native, self.zc_slope, self.control_dt,
                                    clamp=clamp, setpoint=self.setpoint)


def locked_line_guess(params: NVEnsembleParams, bias: BiasField, axis_index: int = 0,
                      branch: int = -1) -> float:
    """Center (h = 0) line of one axis/branch for the given bias."""
    for line in resonance_frequencies(params, bias):
        if line.axis_index == axis_index and line.branch == branch and line.hyperfine_index == 0:
            return line.frequency
    raise ValueError(f"no line for axis {axis_index}, branch {branch}")


def align_phase(phase: float, zc_slope: float, gain_sign: float) -> Tuple[float, float]:
    """Rotate the demodulation phase by pi when needed so sign(zc_slope) == gain_sign."""
    if np.sign(zc_slope) == np.sign(gain_sign):
        return phase, zc_slope
    return float(np.angle(np.exp(1j * (phase + np.pi)))), -zc_slope


def acquire_lock(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    noise: NoiseConfig,
    det: DetectorConfig,
    lockin_cfg: LockinConfig,
    f_guess: float,
    gain_sign: float = -1.0,
    span: float = 10e6,
    n_points: int = 101,
) -> Tuple[LockScenario, DerivLorentzianFit]:
    """
    Prepare a lock at the line nearest f_guess.

    Phases the lock-in on a record half a linewidth off resonance, fits a
    narrow noiseless sweep for the center, measures the local discriminator
    slope there and records the zero-field lock-in level as the setpoint.
    """
    quiet = NoiseConfig()
    dwell = 2 * SETTLE_TAUS * lockin_cfg.tau

    phase = calibrate_phase(params, drive, field, det, lockin_cfg, f_guess)
    cfg = lockin_cfg.with_phase(phase)

    spec = odmr_sweep(params, drive, field, quiet, det, cfg,
                      f_guess - 0.5 * span, f_guess + 0.5 * span, n_points, dwell)
    fit = fit_triplet(spec, fdev=drive.fdev)

    zc = measure_discriminator_slope(params, drive, field, det, cfg, fit.center,
                                     0.01 * params.linewidth, dwell)
    phase, zc = align_phase(phase, zc, gain_sign)
    cfg = lockin_cfg.with_phase(phase)
    setpoint, _ = settled_lockin_mean(params, drive.with_carrier(fit.center), field, quiet,
                                      det, cfg, dwell)

    logger.info(
        f"Lock point {fit.center / 1e9:.6f} GHz, zc_slope={zc:.4g} V/Hz, "
        f"phase={np.degrees(phase):.1f} deg"
    )
    scenario = LockScenario(params, drive.with_carrier(fit.center), field, noise, det, cfg,
                            zc, setpoint)
    return scenario, fit


def closed_loop_run(scenario: LockScenario, pi: PIConfig, duration: float) -> LoopRecord:
    """
    Simulate the lock one control period at a time.

    Each period synthesizes one decimation block at carrier fc + last output,
    runs it through the lock-in and feeds the decimated I sample to pi_step.
    """
    synth = SignalSynthesizer(scenario.params, scenario.drive, scenario.field,
                              scenario.noise, scenario.det)
    lock = LockIn(scenario.lockin_cfg, synth.sample_rate, synth.t0)
    block = lock.decimation
    if abs(pi.dt - lock.out_dt) > 1e-9 * lock.out_dt:
        logger.warning(f"PI dt {pi.dt:.6g}s differs from the lock-in output period "
                       f"{lock.out_dt:.6g}s; using the lock-in period")
        pi = replace(pi, dt=lock.out_dt)

    n_periods = int(round(duration / lock.out_dt))
    if n_periods < 1:
        raise ValueError(f"duration {duration}s is shorter than one control period")

    time = lock.out_t0 + lock.out_dt * np.arange(n_periods)
    error = np.empty(n_periods)
    output = np.empty(n_periods)
    state = PIState()
    gamma_e = scenario.params.gamma_e

    for k in range(n_periods):
        i_out, _ = lock.process(synth.generate(block, carrier_offset=state.last_output))
        measurement = float(i_out[0])
        state, output[k] = pi_step(state, measurement, pi)
        error[k] = pi.setpoint - measurement

    locked = _lock_held(error, scenario)
    logger.info(f"Closed loop: {n_periods} periods, final output {output[-1]:.1f} Hz, "
                f"{'locked' if locked else 'UNLOCKED'}")
    return LoopRecord(time, error, output, output / gamma_e, locked=locked, closed_loop=True)


def _lock_held(error: np.ndarray, scenario: LockScenario) -> bool:
    n_ref = min(LOCK_REFERENCE_PERIODS, len(error))
    reference = float(np.sqrt(np.mean(error[:n_ref] ** 2)))
    floor = LOCK_FLOOR_FRACTION * abs(scenario.zc_slope) * scenario.params.linewidth
    threshold = LOCK_LOSS_FACTOR * max(reference, floor)

    run = 0
    for over in np.abs(error[n_ref:]) > threshold:
        run = run + 1 if over else 0
        if run > LOCK_LOSS_PERIODS:
            logger.warning(f"Lock lost: |error| above {threshold:.3g} V for "
                           f"{LOCK_LOSS_PERIODS} periods")
            return False
    return True


def open_loop_run(scenario: LockScenario, duration: float) -> LoopRecord:
    """Fixed carrier; the field estimate is the error divided by zc_slope * gamma_e."""
    ts = synthesize(scenario.params, scenario.drive, scenario.field, scenario.noise,
                    scenario.det, duration)
    lock = LockIn(scenario.lockin_cfg, ts.rate, ts.t0)
    i_out, _ = lock.process(ts.values)
    error = scenario.setpoint - i_out
    time = lock.out_t0 + lock.out_dt * np.arange(len(i_out))
    estimate = error / (scenario.zc_slope * scenario.params.gamma_e)
    return LoopRecord(time, error, np.zeros_like(error), estimate, locked=True,
                      closed_loop=False)


@dataclass(frozen=True)
class DynamicRangeResult:
    applied: np.ndarray
    measured_open: np.ndarray
    measured_closed: np.ndarray
    range_open: float
    range_closed: float
    open_fdev: float = 0.0
    predicted_open: float = 0.0

    @property
    def improvement(self) -> float:
        return self.range_closed / self.range_open if self.range_open > 0 else float('inf')

    def to_csv(self, path: Union[str, Path]):
        return write_csv(path, CSV_HEADER_DYNRANGE,
                         [self.applied, self.measured_open, self.measured_closed])


def open_loop_limit(linewidth: float, fdev: float, gamma_e: float,
                    tolerance: float = LINEARITY_TOLERANCE) -> float:
    """
    Field at which an open-loop reading of one FM-demodulated Lorentzian leaves
    the small-signal line by `tolerance`.

    With half-width g and modulation index m = fdev/g, the first-harmonic
    discriminator is -2d/R^3 + (4 - m^2) d^3/R^7 + O(d^5) for d = detuning/g and
    R = sqrt(1 + m^2), so the relative deviation is (4 - m^2) d^2 / (2 R^4).
    """
    half = 0.5 * linewidth
    m2 = (fdev / half) ** 2
    curvature = abs(4.0 - m2) / (2.0 * (1.0 + m2) ** 2)
    if curvature == 0:
        return float('inf')
    return float(half * np.sqrt(tolerance / curvature) / gamma_e)


def linear_range(applied: np.ndarray, measured: np.ndarray,
                 tolerance: float = LINEARITY_TOLERANCE) -> float:
    """
    Largest applied field of the in-tolerance run starting at the smallest step.

    The boundary is refined by interpolating the relative deviation linearly in
    log(applied) to the tolerance crossing.
    """
    applied = np.asarray(applied, dtype=float)
    deviation = np.abs(np.asarray(measured) - applied) / applied
    if deviation[0] > tolerance:
        return 0.0
    bad = np.flatnonzero(deviation > tolerance)
    if len(bad) == 0:
        logger.warning("Every step is within tolerance; the range is at least the largest step")
        return float(applied[-1])
    k = bad[0] - 1
    frac = (tolerance - deviation[k]) / (deviation[k + 1] - deviation[k])
    log_range = np.log(applied[k]) + frac * (np.log(applied[k + 1]) - np.log(applied[k]))
    return float(np.exp(log_range))


def open_loop_response(
    scenario: LockScenario,
    applied: np.ndarray,
    dwell: float,
    drive: Optional[FmDriveConfig] = None,
) -> np.ndarray:
    """
    Field read at a fixed carrier for each static step, scaled by the
    zero-crossing slope of the same drive.

    Step k uses noise seed k + 1 of the scenario stream; seed 0 is the
    zero-field reference.
    """
    params = scenario.params
    base = scenario.field
    drive = drive or scenario.drive
    zc_local = measure_discriminator_slope(params, drive, base, scenario.det,
                                           scenario.lockin_cfg, drive.fc,
                                           0.01 * params.linewidth, dwell)
    seeds = derive_seeds(scenario.noise.seed, len(applied) + 1)
    i_ref, _ = settled_lockin_mean(params, drive, base, scenario.noise.with_seed(seeds[0]),
                                   scenario.det, scenario.lockin_cfg, dwell)

    measured = np.empty(len(applied))
    for k, b in enumerate(applied):
        step = ConstantProfile(b, axis_index=base.axis_index, bias=base.bias)
        i_k, _ = settled_lockin_mean(params, drive, step, scenario.noise.with_seed(seeds[k + 1]),
                                     scenario.det, scenario.lockin_cfg, dwell)
        measured[k] = -(i_k - i_ref) / (zc_local * params.gamma_e)
    return measured


def dynamic_range_experiment(
    max_field: float,
    n_steps: int,
    scenario: LockScenario,
    pi: PIConfig,
    hold: float = 0.4,
    open_dwell: Optional[float] = None,
    open_fdev: Optional[float] = None,
) -> DynamicRangeResult:
    """
    Compare open- and closed-loop linearity over a geometric grid of DC fields.

    Open loop measures each field as an independent static step at the fixed
    carrier, scaled by the zero-crossing slope of the discriminator. Closed loop
    runs once through a staircase of the same fields and averages the last 20%
    of each hold.

    Args:
        open_fdev: Drive deviation for the open-loop arm; the scenario's drive
            when omitted. A deviation at or below a quarter linewidth measures
            the intrinsic range of the line.
    """
    if not max_field > 0 or n_steps < 2:
        raise ValueError("max_field must be positive and n_steps at least 2")
    applied = np.geomspace(max_field / 1000.0, max_field, n_steps)
    params = scenario.params
    base = scenario.field
    dwell = open_dwell or 2 * SETTLE_TAUS * scenario.lockin_cfg.tau

    open_drive = scenario.drive
    if open_fdev is not None:
        open_drive = replace(scenario.drive, fdev=float(open_fdev))
    measured_open = open_loop_response(scenario, applied, dwell, open_drive)
    logger.info(f"Open loop: {n_steps} static steps, fdev={open_drive.fdev / 1e3:.0f} kHz")

    stairs = ReplayProfile(staircase_profile(applied, hold), axis_index=base.axis_index,
                           bias=base.bias)
    record = closed_loop_run(scenario.with_field(stairs), pi, n_steps * hold)
    measured_closed = np.empty(n_steps)
    for k in range(n_steps):
        window = (record.time >= (k + 0.8) * hold) & (record.time < (k + 1) * hold)
        measured_closed[k] = float(np.mean(record.field_estimate[window]))

    result = DynamicRangeResult(
        applied, measured_open, measured_closed,
        linear_range(applied, measured_open), linear_range(applied, measured_closed),
        open_fdev=open_drive.fdev,
        predicted_open=open_loop_limit(params.linewidth, open_drive.fdev, params.gamma_e),
    )
    logger.info(f"Dynamic range: open {result.range_open * 1e6:.2f} uT "
                f"(expected {result.predicted_open * 1e6:.2f} uT), "
                f"closed {result.range_closed * 1e6:.1f} uT ({result.improvement:.1f}x)")
    return result
