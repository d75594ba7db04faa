"""
Digital lock-in amplifier.

Chain: first-order Butterworth input high-pass, dual-phase mixing against the
modulation reference, single-pole IIR low-pass with time constant tau, and
pick-every-Nth decimation to the output rate.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import signal

from core.constants import (
    FM_RATE_HZ,
    HP_CUTOFF_HZ,
    LOCKIN_TAU_S,
    OUT_RATE_HZ,
    PHASE_POWER_THRESHOLD,
    SETTLE_TAUS,
)
from .errors import NoPhaseFoundError
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LockinConfig:
    fm: float = FM_RATE_HZ
    phase: float = 0.0
    tau: float = LOCKIN_TAU_S
    hp_cutoff: float = HP_CUTOFF_HZ
    out_rate: float = OUT_RATE_HZ

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 < self.hp_cutoff < self.fm:
            raise ValueError(
                f"hp_cutoff must lie in (0, fm={self.fm}), got {self.hp_cutoff}"
            )
        if not self.out_rate > 0:
            raise ValueError(f"out_rate must be positive, got {self.out_rate}")
        if enbw(self.tau) > 0.5 * self.out_rate:
            logger.warning(
                f"Lock-in noise bandwidth {enbw(self.tau):.4g} Hz exceeds half the output "
                f"rate {self.out_rate:.4g} Hz; output noise will alias"
            )

    def with_phase(self, phase: float) -> 'LockinConfig':
        return LockinConfig(self.fm, phase, self.tau, self.hp_cutoff, self.out_rate)


@dataclass(frozen=True)
class QuadratureSeries:
    i_phase: TimeSeries
    quadrature: TimeSeries

    def __post_init__(self):
        i, q = self.i_phase, self.quadrature
        if len(i) != len(q) or i.t0 != q.t0 or i.dt != q.dt:
            raise ValueError("in-phase and quadrature series must share t0, dt and length")

    def __len__(self) -> int:
        return len(self.i_phase)

    def settled(self, tau: float, n_taus: float = SETTLE_TAUS) -> 'QuadratureSeries':
        """Drop the first n_taus*tau seconds of filter transient."""
        start = self.i_phase.t0 + n_taus * tau
        return QuadratureSeries(self.i_phase.slice_time(start), self.quadrature.slice_time(start))


def enbw(tau: float) -> float:
    """Equivalent noise bandwidth of the single-pole low-pass, Hz."""
    return 1.0 / (4.0 * tau)


def lowpass_response(f, tau: float):
    """Power response |H(f)|^2 of the single-pole low-pass."""
    return 1.0 / (1.0 + (2.0 * np.pi * np.asarray(f) * tau) ** 2)


def decimation_factor(sample_rate: float, out_rate: float) -> int:
    ratio = sample_rate / out_rate
    n = max(1, int(round(ratio)))
    if abs(ratio - n) > 1e-9 * ratio:
        logger.warning(
            f"Input rate {sample_rate:.6g} Hz is not a multiple of out_rate {out_rate:.6g} Hz; "
            f"decimating by {n} for an achieved rate of {sample_rate / n:.6g} Hz"
        )
    return n


def _highpass_coeffs(cutoff: float, sample_rate: float):
    if not 0 < cutoff < 0.5 * sample_rate:
        raise ValueError(
            f"high-pass cutoff {cutoff} Hz must lie below Nyquist {0.5 * sample_rate} Hz"
        )
    return signal.butter(1, cutoff, btype='highpass', fs=sample_rate)


def _lowpass_coeffs(tau: float, dt: float):
    alpha = 1.0 - np.exp(-dt / tau)
    return np.array([alpha]), np.array([1.0, alpha - 1.0])


def high_pass(ts: TimeSeries, cutoff: float) -> TimeSeries:
    """
    First-order IIR high-pass.

    The filter state starts at the steady state of the first sample, so a
    constant record maps to zero without a start-up transient.

    Raises:
        ValueError: cutoff at or above Nyquist
    """
    b, a = _highpass_coeffs(cutoff, ts.rate)
    if len(ts) == 0:
        return ts
    zi = signal.lfilter_zi(b, a) * ts.values[0]
    y, _ = signal.lfilter(b, a, ts.values, zi=zi)
    return ts.with_values(y)


class LockIn:
    """
    Streaming lock-in holding filter state, reference phase and decimation phase.

    A single consumer feeds consecutive chunks to `process`; each call returns
    the decimated (I, Q) samples that became available.
    """

    def __init__(self, cfg: LockinConfig, sample_rate: float, t0: float = 0.0,
                 apply_high_pass: bool = True):
        if cfg.fm >= 0.5 * sample_rate:
            raise ValueError(
                f"reference fm={cfg.fm} Hz must be below Nyquist {0.5 * sample_rate} Hz"
            )
        self.cfg = cfg
        self.sample_rate = float(sample_rate)
        self.dt = 1.0 / self.sample_rate
        self.t0 = float(t0)
        self.decimation = decimation_factor(self.sample_rate, cfg.out_rate)
        self.apply_high_pass = apply_high_pass

        self._hp_b, self._hp_a = _highpass_coeffs(cfg.hp_cutoff, self.sample_rate)
        self._hp_zi = None
        self._lp_b, self._lp_a = _lowpass_coeffs(cfg.tau, self.dt)
        self._zi_i = np.zeros(1)
        self._zi_q = np.zeros(1)
        self._n = 0

    @property
    def out_dt(self) -> float:
        return self.decimation * self.dt

    @property
    def out_t0(self) -> float:
        """Timestamp of the first decimated sample."""
        return self.t0 + (self.decimation - 1) * self.dt

    def process(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            return np.empty(0), np.empty(0)

        if self.apply_high_pass:
            if self._hp_zi is None:
                self._hp_zi = signal.lfilter_zi(self._hp_b, self._hp_a) * x[0]
            x, self._hp_zi = signal.lfilter(self._hp_b, self._hp_a, x, zi=self._hp_zi)

        idx = self._n + np.arange(len(x))
        arg = 2.0 * np.pi * self.cfg.fm * (self.t0 + idx * self.dt) + self.cfg.phase
        i_mix, self._zi_i = signal.lfilter(self._lp_b, self._lp_a, 2.0 * x * np.sin(arg),
                                           zi=self._zi_i)
        q_mix, self._zi_q = signal.lfilter(self._lp_b, self._lp_a, 2.0 * x * np.cos(arg),
                                           zi=self._zi_q)
        self._n += len(x)

        pick = (idx % self.decimation) == self.decimation - 1
        return i_mix[pick], q_mix[pick]


def _run(ts: TimeSeries, cfg: LockinConfig, apply_high_pass: bool) -> QuadratureSeries:
    lockin = LockIn(cfg, ts.rate, ts.t0, apply_high_pass=apply_high_pass)
    i, q = lockin.process(ts.values)
    return QuadratureSeries(
        TimeSeries(lockin.out_t0, lockin.out_dt, i, ts.unit),
        TimeSeries(lockin.out_t0, lockin.out_dt, q, ts.unit),
    )


def demodulate(ts: TimeSeries, cfg: LockinConfig) -> QuadratureSeries:
    """
    Dual-phase demodulation of an already high-passed record.

    I = LP[2 x sin(2 pi fm t + phase)], Q = LP[2 x cos(2 pi fm t + phase)],
    decimated to cfg.out_rate.

    Raises:
        ValueError: fm at or above the record's Nyquist frequency
    """
    return _run(ts, cfg, apply_high_pass=False)


def lockin(ts: TimeSeries, cfg: LockinConfig) -> QuadratureSeries:
    """Full instrument chain: high_pass at cfg.hp_cutoff followed by demodulate."""
    return _run(ts, cfg, apply_high_pass=True)


def auto_phase(ts: TimeSeries, cfg: LockinConfig) -> float:
    """
    Demodulation phase that puts the whole fm component into I.

    Args:
        ts: Calibration record (high-passed if the measurement chain uses the high-pass)
        cfg: Lock-in settings; cfg.phase is ignored

    Returns:
        Phase in (-pi, pi], rad

    Raises:
        NoPhaseFoundError: no usable signal power at fm
    """
    quad = demodulate(ts, cfg.with_phase(0.0))
    if quad.i_phase.duration > 2 * SETTLE_TAUS * cfg.tau:
        quad = quad.settled(cfg.tau)
    i0 = float(np.mean(quad.i_phase.values))
    q0 = float(np.mean(quad.quadrature.values))
    power = i0 ** 2 + q0 ** 2

    rms = float(np.sqrt(np.mean(ts.values ** 2))) if len(ts) else 0.0
    threshold = max(PHASE_POWER_THRESHOLD, (1e-6 * rms) ** 2)
    if not power > threshold:
        raise NoPhaseFoundError(
            f"signal power at fm={cfg.fm} Hz is {power:.3g} V^2, "
            f"below threshold {threshold:.3g} V^2"
        )
    phase = float(np.arctan2(q0, i0))
    logger.debug(f"Auto phase {np.degrees(phase):.2f} deg (amplitude {np.sqrt(power):.4g} V)")
    return phase
