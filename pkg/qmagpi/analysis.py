"""
Figures of merit: ESR and shot-noise sensitivities, Welch PSD with field
scaling, overlapping Allan deviation with chi-squared confidence intervals,
Gaussian fits of fluctuation records and square-wave level extraction.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import allantools
import numpy as np
from allantools.allantools import calc_adev_phase
from scipy import signal, stats

from core.constants import (
    CSV_HEADER_ALLAN,
    CSV_HEADER_PSD,
    EDF_CONSERVATIVE,
    EDF_GREENHALL,
    EDF_MODE_VALUES,
    EDF_WHITE_FM,
    LORENTZIAN_SHAPE_FACTOR,
    MIN_GAUSSIAN_SAMPLES,
    NOISE_BAND_HZ,
    ONE_SIGMA_CI,
    OVERLAP_DEFAULT,
    WINDOW_DEFAULT,
)
from .lockin import lowpass_response
from .timeseries import TimeSeries, write_csv

logger = logging.getLogger(__name__)


# ========== Sensitivity ==========

@dataclass(frozen=True)
class SensitivityReport:
    eta: float
    sigma: float
    tau: float
    slope: float
    gamma_e: float

    @classmethod
    def from_values(cls, sigma: float, tau: float, slope: float, gamma_e: float):
        return cls(sensitivity_esr(sigma, tau, slope, gamma_e), sigma, tau, slope, gamma_e)

    def to_dict(self) -> dict:
        return {
            'eta_T_rtHz': self.eta,
            'sigma_v': self.sigma,
            'tau_s': self.tau,
            'slope_v_per_hz': self.slope,
            'gamma_e_hz_per_t': self.gamma_e,
        }


def sensitivity_esr(sigma: float, tau: float, slope: float, gamma_e: float) -> float:
    """
    Minimum detectable field per root hertz from the lock-in noise and slope.

    eta = sigma * sqrt(tau) / (gamma_e * slope)

    Raises:
        ValueError: zero slope or negative inputs
    """
    if slope == 0:
        raise ValueError("discriminator slope is zero; sensitivity undefined")
    if sigma < 0 or tau <= 0 or gamma_e <= 0 or slope < 0:
        raise ValueError("sigma must be non-negative and tau, slope, gamma_e positive")
    return sigma * np.sqrt(tau) / (gamma_e * slope)


def shot_noise_sensitivity(gamma_e: float, linewidth: float, contrast: float,
                           rate: float) -> float:
    """Photon shot-noise limit for a Lorentzian line, T/sqrt(Hz)."""
    if gamma_e <= 0 or linewidth <= 0 or rate <= 0:
        raise ValueError("gamma_e, linewidth and rate must be positive")
    if not 0 < contrast < 1:
        raise ValueError(f"contrast must lie in (0, 1), got {contrast}")
    return LORENTZIAN_SHAPE_FACTOR * linewidth / (gamma_e * contrast * np.sqrt(rate))


def fluctuation_sensitivity(sigma_b: float, tau: float) -> float:
    """Field standard deviation of a lock-in output with ENBW 1/(4 tau), normalized to 1 s."""
    if sigma_b < 0 or tau <= 0:
        raise ValueError("sigma_b must be non-negative and tau positive")
    return sigma_b * np.sqrt(2.0 * tau)


# ========== Power spectral density ==========

@dataclass(frozen=True)
class PsdResult:
    freqs: np.ndarray
    psd_v: np.ndarray
    psd_b: Optional[np.ndarray] = None
    segment_count: int = 1
    window_name: str = WINDOW_DEFAULT

    @property
    def df(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def total_power(self) -> float:
        return float(np.sum(self.psd_v) * self.df)

    def to_csv(self, path: Union[str, Path]):
        psd_b = self.psd_b if self.psd_b is not None else np.full_like(self.psd_v, np.nan)
        return write_csv(path, CSV_HEADER_PSD, [self.freqs, self.psd_v, psd_b])


@dataclass(frozen=True)
class NoiseFloor:
    f_lo: float
    f_hi: float
    mean_psd: float
    sensitivity: float


def psd(
    ts: TimeSeries,
    segments: int = 8,
    overlap_fraction: float = OVERLAP_DEFAULT,
    window: str = WINDOW_DEFAULT,
    zc_slope: Optional[float] = None,
    gamma_e: Optional[float] = None,
    lockin_tau: Optional[float] = None,
) -> PsdResult:
    """
    Welch-averaged one-sided PSD with density scaling (Parseval-normalized).

    Args:
        ts: Record to analyse
        segments: Number of Welch segments spanning the record
        overlap_fraction: Segment overlap in [0, 1)
        window: scipy window name
        zc_slope: Discriminator slope (V/Hz); with gamma_e adds the field PSD
        gamma_e: Gyromagnetic ratio (Hz/T)
        lockin_tau: When given, divide out the single-pole lock-in roll-off

    Raises:
        ValueError: segments < 1 or record shorter than 2 * segments
    """
    if segments < 1:
        raise ValueError(f"segments must be at least 1, got {segments}")
    n = len(ts)
    if n < 2 * segments:
        raise ValueError(f"record of {n} samples is too short for {segments} segments")
    if not 0 <= overlap_fraction < 1:
        raise ValueError(f"overlap_fraction must lie in [0, 1), got {overlap_fraction}")

    nperseg = int(n / (1 + (segments - 1) * (1 - overlap_fraction)))
    noverlap = int(overlap_fraction * nperseg)
    freqs, pxx = signal.welch(ts.values, fs=ts.rate, window=window, nperseg=nperseg,
                              noverlap=noverlap, detrend='constant', scaling='density')
    count = 1 + (n - nperseg) // (nperseg - noverlap)

    if lockin_tau is not None:
        pxx = pxx / lowpass_response(freqs, lockin_tau)

    psd_b = None
    if zc_slope is not None:
        if gamma_e is None:
            raise ValueError("gamma_e is required for field scaling")
        psd_b = pxx / (zc_slope * gamma_e) ** 2
    return PsdResult(freqs, pxx, psd_b, count, window)


def average_psd(results: Sequence[PsdResult]) -> PsdResult:
    """Mean of PSDs computed on identical frequency grids (e.g. repeated traces)."""
    if not results:
        raise ValueError("no spectra to average")
    first = results[0]
    for r in results[1:]:
        if len(r.freqs) != len(first.freqs) or not np.allclose(r.freqs, first.freqs):
            raise ValueError("spectra must share a frequency grid")
    psd_v = np.mean([r.psd_v for r in results], axis=0)
    psd_b = None
    if all(r.psd_b is not None for r in results):
        psd_b = np.mean([r.psd_b for r in results], axis=0)
    return PsdResult(first.freqs, psd_v, psd_b, sum(r.segment_count for r in results),
                     first.window_name)


def noise_floor(result: PsdResult, f_lo: float = NOISE_BAND_HZ[0],
                f_hi: float = NOISE_BAND_HZ[1]) -> NoiseFloor:
    """
    Mean field PSD over [f_lo, f_hi] and the matching sensitivity sqrt(S/2),
    the minimum detectable field for 1 s of averaging over a one-sided white floor.
    """
    if result.psd_b is None:
        raise ValueError("noise floor needs a field-scaled PSD")
    band = (result.freqs >= f_lo) & (result.freqs <= f_hi)
    if not np.any(band):
        raise ValueError(f"no PSD bins in [{f_lo}, {f_hi}] Hz")
    mean_psd = float(np.mean(result.psd_b[band]))
    return NoiseFloor(f_lo, f_hi, mean_psd, float(np.sqrt(mean_psd / 2.0)))


# ========== Allan deviation ==========

@dataclass(frozen=True)
class AllanResult:
    taus: np.ndarray
    adev: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_samples: np.ndarray
    edf: np.ndarray

    def to_csv(self, path: Union[str, Path]):
        return write_csv(path, CSV_HEADER_ALLAN, [self.taus, self.adev, self.ci_low, self.ci_high])

    def slope(self, tau_lo: float, tau_hi: float) -> float:
        """Log-log slope of adev fitted over taus in [tau_lo, tau_hi]."""
        sel = (self.taus >= tau_lo) & (self.taus <= tau_hi) & (self.adev > 0)
        if np.count_nonzero(sel) < 2:
            raise ValueError(f"fewer than two taus in [{tau_lo}, {tau_hi}]")
        return float(np.polyfit(np.log(self.taus[sel]), np.log(self.adev[sel]), 1)[0])


def octave_taus(ts: TimeSeries) -> np.ndarray:
    """tau = 2^k * dt for every averaging factor up to a third of the record."""
    m_max = max(1, len(ts) // 3)
    m = 2 ** np.arange(int(np.floor(np.log2(m_max))) + 1)
    return m * ts.dt


def _averaging_factor(tau: float, dt: float) -> int:
    m = int(round(tau / dt))
    if m < 1 or abs(m * dt - tau) > 1e-9 * tau:
        raise ValueError(f"tau={tau} is not an integer multiple of dt={dt}")
    return m


def _edf(edf_mode: str, n_phase: int, m: int, n_terms: int) -> float:
    if edf_mode == EDF_CONSERVATIVE:
        return float(max(n_terms - 1, 1))
    if edf_mode == EDF_GREENHALL:
        edf = allantools.edf_greenhall(alpha=0, d=2, m=m, N=n_phase, overlapping=True,
                                       modified=False, verbose=False)
    else:
        edf = allantools.edf_simple(n_phase, m, 0)
    if not np.isfinite(edf) or edf < 1.0:
        edf = float(n_terms - 1)
    return max(float(edf), 1.0)


def overlapping_allan(
    ts: TimeSeries,
    taus: Sequence[float],
    ci: float = ONE_SIGMA_CI,
    edf_mode: str = EDF_WHITE_FM,
) -> AllanResult:
    """
    Overlapping Allan deviation of frequency-like samples (field, volts, Hz).

    The deviations come from allantools.oadev on the samples as fractional
    frequency data; the chi-squared interval uses the white-FM EDF chosen by
    edf_mode.

    Raises:
        ValueError: tau not a multiple of dt, or fewer than 2m samples
    """
    if edf_mode not in EDF_MODE_VALUES:
        raise ValueError(f"edf_mode must be one of {EDF_MODE_VALUES}, got {edf_mode}")
    y = ts.values
    rate = 1.0 / ts.dt
    n_phase = len(y) + 1

    taus = np.asarray(taus, dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise ValueError("taus must be strictly increasing")
    factors = []
    for tau in taus:
        m = _averaging_factor(tau, ts.dt)
        if len(y) < 2 * m:
            raise ValueError(f"record of {len(y)} samples is too short for tau={tau} (m={m})")
        factors.append(m)

    taus_used, devs, _, ns = allantools.oadev(y, rate=rate, data_type='freq',
                                              taus=np.array(factors) * ts.dt)
    by_factor = {int(round(t * rate)): (float(d), int(n)) for t, d, n in zip(taus_used, devs, ns)}

    adev, lo, hi, counts, edfs = [], [], [], [], []
    for m in factors:
        if m not in by_factor:
            # oadev drops estimates resting on one second difference (m = N/2)
            phase = allantools.frequency2phase(y, rate)
            dev, _, n = calc_adev_phase(phase, rate, m, 1)
            by_factor[m] = (float(dev), int(n))
        dev, n_terms = by_factor[m]
        edf = _edf(edf_mode, n_phase, m, n_terms)
        low, high = allantools.confidence_interval(dev=dev, ci=ci, edf=edf)
        adev.append(dev)
        lo.append(low)
        hi.append(high)
        counts.append(n_terms)
        edfs.append(edf)

    return AllanResult(taus, np.array(adev), np.array(lo), np.array(hi),
                       np.array(counts), np.array(edfs))


def allan_sensitivity(result: AllanResult) -> np.ndarray:
    return result.adev * np.sqrt(result.taus)


# ========== Distribution fits ==========

@dataclass(frozen=True)
class GaussianFit:
    mean: float
    sigma: float
    sigma_robust: float
    flagged: bool
    bin_edges: np.ndarray
    counts: np.ndarray


def gaussian_fit(ts: Union[TimeSeries, np.ndarray]) -> GaussianFit:
    """
    Maximum-likelihood Gaussian mean and standard deviation.

    sigma_robust is the interquartile width scaled to a normal sigma; the two
    agree for Gaussian data. The Freedman-Diaconis histogram is returned for
    reporting only; a constant record yields sigma = 0 with the flag set.
    """
    values = ts.values if isinstance(ts, TimeSeries) else np.asarray(ts, dtype=float)
    if len(values) < MIN_GAUSSIAN_SAMPLES:
        raise ValueError(f"gaussian_fit needs at least {MIN_GAUSSIAN_SAMPLES} samples, "
                         f"got {len(values)}")
    mean = float(np.mean(values))
    sigma = float(np.std(values))
    flagged = sigma == 0.0
    if flagged:
        logger.warning("Constant record: Gaussian width is zero")
    counts, edges = np.histogram(values, bins='fd')
    sigma_robust = float(stats.iqr(values, scale='normal'))
    return GaussianFit(mean, sigma, sigma_robust, flagged, edges, counts)


def square_wave_levels(ts: TimeSeries, frequency: float, settle: float = 0.0,
                       t_start: float = 0.0) -> Tuple[float, float]:
    """
    Mean of the high (first half period) and low plateaus of a square-wave response.

    Samples within `settle` seconds after each transition are excluded.
    """
    if frequency <= 0:
        raise ValueError("square-wave frequency must be positive")
    half = 0.5 / frequency
    if settle >= half:
        raise ValueError("settle time must be shorter than half a period")
    phase = np.mod(ts.times - t_start, 2.0 * half)
    high = (phase >= settle) & (phase < half)
    low = phase >= half + settle
    if not np.any(high) or not np.any(low):
        raise ValueError("record does not cover both square-wave plateaus")
    return float(np.mean(ts.values[high])), float(np.mean(ts.values[low]))


def residual_fluctuation(ts: TimeSeries, frequency: float, amplitude: float,
                         offset: float = 0.0, settle: float = 0.0) -> np.ndarray:
    """Plateau samples minus the ideal square wave, skipping `settle` s after each edge."""
    half = 0.5 / frequency
    phase = np.mod(ts.times, 2.0 * half)
    on_plateau = np.mod(phase, half) >= settle
    ideal = offset + np.where(phase < half, amplitude, -amplitude)
    return (ts.values - ideal)[on_plateau]

