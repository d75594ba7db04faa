"""
Photodetector voltage synthesis under FM microwave drive.

The synthesizer evaluates the 24-line ODMR model per sample at the
instantaneous drive frequency fc + fdev*sin(2*pi*fm*t), converts the expected
photon count to a detector voltage and adds shot, electronic and resonance-drift
noise from independent seeded streams.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from core.constants import (
    ELECTRONIC_PSD_V2HZ,
    FM_DEVIATION_HZ,
    FM_RATE_HZ,
    CARRIER_HZ,
    MAX_SYNTH_SAMPLES,
    POISSON_GAUSSIAN_THRESHOLD,
    RESPONSIVITY_GAIN,
    SAMPLES_PER_MOD_PERIOD,
)
from core.nv_model import NVEnsembleParams, fluorescence_matrix, line_frequency_matrix
from .errors import ResourceGuardError
from .field_profiles import ConstantProfile, FieldProfile
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)

_CHUNK = 65536


@dataclass(frozen=True)
class FmDriveConfig:
    fc: float = CARRIER_HZ
    fdev: float = FM_DEVIATION_HZ
    fm: float = FM_RATE_HZ

    def __post_init__(self):
        if not self.fm > 0:
            raise ValueError(f"fm must be positive, got {self.fm}")
        if not self.fdev >= 0:
            raise ValueError(f"fdev must be non-negative, got {self.fdev}")
        if not self.fc > 0:
            raise ValueError(f"fc must be positive, got {self.fc}")
        if not self.fdev < self.fc:
            raise ValueError("fdev must be smaller than fc")

    def with_carrier(self, fc: float) -> 'FmDriveConfig':
        return FmDriveConfig(fc=fc, fdev=self.fdev, fm=self.fm)


@dataclass(frozen=True)
class NoiseConfig:
    shot_noise: bool = False
    electronic_psd: float = 0.0
    drift_rw: float = 0.0
    temperature_profile: Optional[TimeSeries] = None
    seed: int = 0

    def __post_init__(self):
        if self.electronic_psd < 0 or self.drift_rw < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @classmethod
    def nominal(cls, seed: int = 0) -> 'NoiseConfig':
        return cls(shot_noise=True, electronic_psd=ELECTRONIC_PSD_V2HZ, seed=seed)

    def with_seed(self, seed: int) -> 'NoiseConfig':
        return NoiseConfig(
            self.shot_noise, self.electronic_psd, self.drift_rw, self.temperature_profile, seed
        )


@dataclass(frozen=True)
class DetectorConfig:
    responsivity_gain: float = RESPONSIVITY_GAIN
    sample_rate: Optional[float] = None

    def __post_init__(self):
        if not self.responsivity_gain > 0:
            raise ValueError("responsivity_gain must be positive")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def rate_for(self, drive: FmDriveConfig) -> float:
        """Synthesis rate, defaulting to 50 samples per modulation period."""
        if self.sample_rate is not None:
            return float(self.sample_rate)
        return SAMPLES_PER_MOD_PERIOD * drive.fm


def fm_instantaneous_frequency(drive: FmDriveConfig, t):
    return drive.fc + drive.fdev * np.sin(2.0 * np.pi * drive.fm * np.asarray(t))


def derive_seeds(seed: int, n: int) -> List[int]:
    """Independent child seeds for n traces or sweep points of one run."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def coil_field(current: float, coil_constant: float, **kwargs) -> ConstantProfile:
    """Constant test field of a coil carrying a DC current (coil_constant in T/A)."""
    return ConstantProfile(amplitude=current * coil_constant, **kwargs)


class SignalSynthesizer:
    """
    Streaming synthesizer.

    Successive `generate` calls continue the same time axis, random streams and
    drift accumulator, so a control loop can retune the carrier between blocks.
    """

    def __init__(
        self,
        params: NVEnsembleParams,
        drive: FmDriveConfig,
        field: FieldProfile,
        noise: NoiseConfig,
        det: DetectorConfig,
        t0: float = 0.0,
    ):
        self.params = params
        self.drive = drive
        self.field = field
        self.noise = noise
        self.det = det
        self.t0 = float(t0)
        self.sample_rate = det.rate_for(drive)
        self.dt = 1.0 / self.sample_rate

        if drive.fm >= 0.5 * self.sample_rate:
            raise ValueError(
                f"fm={drive.fm} Hz must be below half the synthesis rate {self.sample_rate} Hz"
            )

        shot_seq, elec_seq, drift_seq = np.random.SeedSequence(int(noise.seed)).spawn(3)
        self._shot_rng = np.random.default_rng(shot_seq)
        self._elec_rng = np.random.default_rng(elec_seq)
        self._drift_rng = np.random.default_rng(drift_seq)

        self._electronic_std = np.sqrt(noise.electronic_psd * self.sample_rate / 2.0)
        self._drift_hz = 0.0
        self._n = 0

    @property
    def time(self) -> float:
        """Time of the next sample to be generated."""
        return self.t0 + self._n * self.dt

    @property
    def samples_generated(self) -> int:
        return self._n

    def generate(self, n_samples: int, carrier_offset: float = 0.0) -> np.ndarray:
        """
        Generate the next n_samples detector voltages.

        Args:
            n_samples: Number of samples
            carrier_offset: Shift added to the configured carrier fc, Hz

        Returns:
            Voltage array, V
        """
        if n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        out = np.empty(n_samples)
        for start in range(0, n_samples, _CHUNK):
            stop = min(start + _CHUNK, n_samples)
            out[start:stop] = self._generate_chunk(stop - start, carrier_offset)
        return out

    def _generate_chunk(self, k: int, carrier_offset: float) -> np.ndarray:
        params, noise = self.params, self.noise
        t = self.t0 + (self._n + np.arange(k)) * self.dt
        self._n += k

        offsets = self._drift_path(k)
        if noise.temperature_profile is not None:
            temp = noise.temperature_profile
            offsets = offsets + params.dDdT * np.interp(t, temp.times, temp.values)

        lines = line_frequency_matrix(params, self.field.vectors(t, params.axes_array), offsets)
        f_mw = fm_instantaneous_frequency(self.drive, t) + carrier_offset
        pl = fluorescence_matrix(params, lines, f_mw)

        expected = params.photon_rate * pl * self.dt
        counts = self._draw_counts(expected) if noise.shot_noise else expected
        volts = self.det.responsivity_gain * counts / self.dt

        if self._electronic_std > 0:
            volts = volts + self._elec_rng.normal(0.0, self._electronic_std, k)
        return volts

    def _drift_path(self, k: int) -> np.ndarray:
        if self.noise.drift_rw <= 0:
            return np.zeros(k)
        steps = self._drift_rng.normal(0.0, self.noise.drift_rw * np.sqrt(self.dt), k)
        path = self._drift_hz + np.cumsum(steps)
        self._drift_hz = float(path[-1])
        return path

    def _draw_counts(self, lam: np.ndarray) -> np.ndarray:
        lam = np.clip(lam, 0.0, None)
        gaussian = lam > POISSON_GAUSSIAN_THRESHOLD
        if np.all(gaussian):
            return self._shot_rng.normal(lam, np.sqrt(lam))
        counts = np.empty_like(lam)
        counts[gaussian] = self._shot_rng.normal(lam[gaussian], np.sqrt(lam[gaussian]))
        counts[~gaussian] = self._shot_rng.poisson(lam[~gaussian])
        return counts


def synthesize(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    noise: NoiseConfig,
    det: DetectorConfig,
    duration: float,
    t0: float = 0.0,
) -> TimeSeries:
    """
    Batch synthesis of a detector voltage record.

    Raises:
        ValueError: non-positive duration
        ResourceGuardError: more than 1e9 samples requested
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    rate = det.rate_for(drive)
    n_samples = int(round(duration * rate))
    if n_samples > MAX_SYNTH_SAMPLES:
        raise ResourceGuardError(
            f"{duration}s at {rate:.4g} S/s is {n_samples} samples, above the "
            f"{MAX_SYNTH_SAMPLES} sample limit"
        )

    synth = SignalSynthesizer(params, drive, field, noise, det, t0=t0)
    logger.debug(f"Synthesizing {n_samples} samples at {rate:.4g} S/s, fc={drive.fc:.6g} Hz")
    return TimeSeries(t0, synth.dt, synth.generate(n_samples), 'V')
