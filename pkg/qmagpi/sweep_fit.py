"""
FM-ODMR sweeps and derivative-Lorentzian triplet fits.

The fit model is a 14N hyperfine triplet with shared linewidth and amplitude:

    V(f) = baseline + amplitude * (gamma/2) * sum_h D(f - center - h*hf_split)

where D is dL/df of a unit-height Lorentzian, or, when the drive deviation is
given, the exact first-harmonic response of the Lorentzian under sinusoidal FM.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import integrate, optimize

from core.constants import CSV_HEADER_SPECTRUM, HYPERFINE_SPLIT_HZ, MIN_DWELL_TAUS, SETTLE_TAUS
from core.nv_model import NVEnsembleParams
from .errors import FitFailedError, NormalizationError
from .field_profiles import FieldProfile
from .lockin import LockinConfig, auto_phase, high_pass, lockin
from .signal_synth import DetectorConfig, FmDriveConfig, NoiseConfig, derive_seeds, synthesize
from .timeseries import read_csv, write_csv

logger = logging.getLogger(__name__)

_MAX_ITERATIONS = 200
_FTOL = 1e-10
_XTOL = 1e-8
_SEED_WIDTHS = 8
_THETA = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
_SIN_THETA = np.sin(_THETA)


@dataclass(frozen=True)
class OdmrSpectrum:
    freqs: np.ndarray
    i_phase: np.ndarray
    quadrature: np.ndarray
    dwell: float = 0.0

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        i = np.asarray(self.i_phase, dtype=float)
        q = np.asarray(self.quadrature, dtype=float)
        if not (len(freqs) == len(i) == len(q)):
            raise ValueError("spectrum arrays must have equal lengths")
        if len(freqs) > 1 and np.any(np.diff(freqs) <= 0):
            raise ValueError("spectrum frequencies must be strictly increasing")
        object.__setattr__(self, 'freqs', freqs)
        object.__setattr__(self, 'i_phase', i)
        object.__setattr__(self, 'quadrature', q)

    def __len__(self) -> int:
        return len(self.freqs)

    def to_csv(self, path: Union[str, Path]):
        return write_csv(path, CSV_HEADER_SPECTRUM, [self.freqs, self.i_phase, self.quadrature])

    @classmethod
    def from_csv(cls, path: Union[str, Path], dwell: float = 0.0) -> 'OdmrSpectrum':
        data = read_csv(path, CSV_HEADER_SPECTRUM)
        return cls(data['freq_hz'], data['i_v'], data['q_v'], dwell)


@dataclass(frozen=True)
class DerivLorentzianFit:
    center: float
    gamma: float
    amplitude: float
    hf_split: float
    baseline: float
    residual_rms: float = 0.0
    max_slope: float = 0.0
    zc_slope: float = 0.0
    fdev: float = 0.0

    @property
    def parameters(self) -> np.ndarray:
        return np.array([self.center, self.gamma, self.amplitude, self.hf_split, self.baseline])

    def model(self, freqs) -> np.ndarray:
        return triplet_model(np.asarray(freqs, dtype=float), *self.parameters, fdev=self.fdev)


def _lorentzian_derivative(delta, half):
    return -2.0 * delta * half ** 2 / (delta ** 2 + half ** 2) ** 2


def _fm_first_harmonic(delta, half, fdev):
    # (2/fdev) <L(delta + fdev sin t) sin t> over one modulation period
    shifted = delta[..., np.newaxis] + fdev * _SIN_THETA
    lor = half ** 2 / (shifted ** 2 + half ** 2)
    return (2.0 / fdev) * np.mean(lor * _SIN_THETA, axis=-1)


def triplet_model(freqs, center, gamma, amplitude, hf_split, baseline, fdev: float = 0.0):
    """Discriminator voltage of the shared-parameter hyperfine triplet."""
    half = 0.5 * gamma
    total = np.zeros_like(freqs, dtype=float)
    for h in (-1, 0, 1):
        delta = freqs - (center + h * hf_split)
        if fdev > 0:
            total = total + _fm_first_harmonic(delta, half, fdev)
        else:
            total = total + _lorentzian_derivative(delta, half)
    return baseline + amplitude * half * total


def settled_lockin_mean(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    noise: NoiseConfig,
    det: DetectorConfig,
    lockin_cfg: LockinConfig,
    dwell: float,
) -> Tuple[float, float]:
    """Mean (I, Q) of one dwell at a fixed carrier after the 5*tau settling discard."""
    ts = synthesize(params, drive, field, noise, det, dwell)
    quad = lockin(ts, lockin_cfg)
    if dwell > SETTLE_TAUS * lockin_cfg.tau + quad.i_phase.dt:
        quad = quad.settled(lockin_cfg.tau)
    else:
        logger.warning(f"Dwell {dwell}s leaves no settled samples; using the final sample")
        return float(quad.i_phase.values[-1]), float(quad.quadrature.values[-1])
    return float(np.mean(quad.i_phase.values)), float(np.mean(quad.quadrature.values))


def odmr_sweep(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    noise: NoiseConfig,
    det: DetectorConfig,
    lockin_cfg: LockinConfig,
    f_start: float,
    f_stop: float,
    n_points: int,
    dwell: float,
) -> OdmrSpectrum:
    """
    Step the carrier over a uniform grid and record the settled lock-in output.

    Args:
        drive: Template drive; its carrier is replaced by each grid frequency
        dwell: Time spent at each frequency, s

    Returns:
        OdmrSpectrum of settled (I, Q) means
    """
    if not f_start < f_stop:
        raise ValueError(f"f_start must be below f_stop, got {f_start} >= {f_stop}")
    if n_points < 10:
        raise ValueError(f"a sweep needs at least 10 points, got {n_points}")
    if dwell < MIN_DWELL_TAUS * lockin_cfg.tau:
        logger.warning(
            f"Dwell {dwell}s is shorter than {MIN_DWELL_TAUS} lock-in time constants"
        )

    freqs = np.linspace(f_start, f_stop, n_points)
    seeds = derive_seeds(noise.seed, n_points)
    i_vals = np.empty(n_points)
    q_vals = np.empty(n_points)

    logger.info(
        f"ODMR sweep {f_start / 1e9:.6f}-{f_stop / 1e9:.6f} GHz, {n_points} points, "
        f"{dwell}s dwell"
    )
    for k, f in enumerate(freqs):
        i_vals[k], q_vals[k] = settled_lockin_mean(
            params, drive.with_carrier(f), field, noise.with_seed(seeds[k]), det,
            lockin_cfg, dwell,
        )
    return OdmrSpectrum(freqs, i_vals, q_vals, dwell)


def initial_guess(
    spec: OdmrSpectrum,
    hf_split: float = HYPERFINE_SPLIT_HZ,
    fdev: float = 0.0,
    n_widths: int = _SEED_WIDTHS,
) -> DerivLorentzianFit:
    """
    Starting point for fit_triplet.

    The unit-amplitude triplet template is placed at every grid frequency for a
    ladder of trial linewidths; amplitude and baseline at each placement are the
    closed-form linear least-squares solution. The placement with the smallest
    residual is returned, so a side line or a noise crossing cannot capture the
    center.
    """
    f, y = spec.freqs, spec.i_phase
    step = float(np.min(np.diff(f)))
    span = float(f[-1] - f[0])
    widths = np.geomspace(2.0 * step, max(span / 6.0, 4.0 * step), n_widths)

    y_mean = float(np.mean(y))
    y_c = y - y_mean
    best_cost, best = np.inf, None
    for gamma in widths:
        # rows: template centered on f[k]
        templates = triplet_model(f[np.newaxis, :], f[:, np.newaxis], gamma, 1.0, hf_split, 0.0,
                                  fdev=fdev)
        t_mean = templates.mean(axis=1)
        t_c = templates - t_mean[:, np.newaxis]
        var = np.sum(t_c ** 2, axis=1)
        cov = t_c @ y_c
        explained = np.divide(cov ** 2, var, out=np.zeros_like(var), where=var > 0)
        k = int(np.argmax(explained))
        cost = float(np.sum(y_c ** 2) - explained[k])
        if cost < best_cost:
            amplitude = cov[k] / var[k] if var[k] > 0 else 0.0
            best_cost = cost
            best = (float(f[k]), float(gamma), float(amplitude), y_mean - amplitude * t_mean[k])

    center, gamma, amplitude, baseline = best
    return DerivLorentzianFit(center, gamma, amplitude, hf_split, baseline, fdev=fdev)


def fit_triplet(
    spec: OdmrSpectrum,
    init: Optional[DerivLorentzianFit] = None,
    fdev: Optional[float] = None,
) -> DerivLorentzianFit:
    """
    Levenberg-Marquardt fit of the triplet model.

    Args:
        spec: Spectrum to fit
        init: Starting parameters; initial_guess(spec) when omitted
        fdev: Drive deviation for the modulation-aware model (defaults to init.fdev)

    Returns:
        DerivLorentzianFit with residual_rms, max_slope and zc_slope filled in

    Raises:
        FitFailedError: no convergence within the iteration budget
    """
    if init is None:
        init = initial_guess(spec, fdev=fdev or 0.0)
    fdev = init.fdev if fdev is None else float(fdev)

    span = spec.freqs[-1] - spec.freqs[0]
    if span < 3.0 * init.gamma + 2.0 * init.hf_split:
        logger.warning(f"Spectrum span {span:.4g} Hz is narrow for the triplet being fitted")

    # normalize so every parameter is order one
    f_ref = float(np.mean(spec.freqs))
    f_scale = max(abs(init.gamma), 1.0)
    v_scale = float(np.max(np.abs(spec.i_phase - np.median(spec.i_phase))))
    if v_scale == 0:
        v_scale = max(float(np.max(np.abs(spec.i_phase))), 1.0)
    x = (spec.freqs - f_ref) / f_scale
    y = spec.i_phase / v_scale
    fdev_n = fdev / f_scale

    def residuals(p):
        return triplet_model(x, p[0], p[1], p[2], p[3], p[4], fdev=fdev_n) - y

    p0 = np.array([
        (init.center - f_ref) / f_scale,
        init.gamma / f_scale,
        init.amplitude / v_scale,
        init.hf_split / f_scale,
        init.baseline / v_scale,
    ])
    result = optimize.least_squares(
        residuals, p0, method='lm', x_scale='jac', ftol=_FTOL, xtol=_XTOL, gtol=_FTOL,
        max_nfev=_MAX_ITERATIONS * (len(p0) + 1),
    )

    p = result.x
    gamma, amplitude = p[1], p[2]
    if gamma < 0:
        # (amplitude, -gamma) describes the same curve as (-amplitude, gamma)
        gamma, amplitude = -gamma, -amplitude
    fit = DerivLorentzianFit(
        center=f_ref + p[0] * f_scale,
        gamma=gamma * f_scale,
        amplitude=amplitude * v_scale,
        hf_split=p[3] * f_scale,
        baseline=p[4] * v_scale,
        residual_rms=float(np.sqrt(np.mean(result.fun ** 2))) * v_scale,
        fdev=fdev,
    )

    if result.status <= 0 or not np.all(np.isfinite(p)) or fit.gamma == 0:
        raise FitFailedError(
            f"triplet fit did not converge: {result.message}",
            last_iterate=fit,
            residual_rms=fit.residual_rms,
        )

    fit = replace(fit, max_slope=max_model_slope(fit, spec.freqs),
                  zc_slope=model_slope(fit, fit.center))
    logger.info(
        f"Triplet fit: center={fit.center / 1e9:.6f} GHz, gamma={fit.gamma / 1e6:.4f} MHz, "
        f"hf={fit.hf_split / 1e6:.4f} MHz, zc_slope={fit.zc_slope:.4g} V/Hz"
    )
    return fit


def model_slope(fit: DerivLorentzianFit, f: float) -> float:
    h = 1e-4 * fit.gamma
    v = fit.model(np.array([f - h, f + h]))
    return float((v[1] - v[0]) / (2.0 * h))


def max_model_slope(fit: DerivLorentzianFit, freqs: np.ndarray) -> float:
    """max |dV/df| of the fitted model on a grid ten times denser than the data."""
    grid = np.linspace(freqs[0], freqs[-1], 10 * len(freqs))
    return float(np.max(np.abs(np.gradient(fit.model(grid), grid))))


def integrate_spectrum(spec: OdmrSpectrum) -> np.ndarray:
    """
    Cumulative trapezoidal integral of I over frequency, scaled to [0, 1].

    The result is oriented as a dip spectrum: the ends of the sweep map high.

    Raises:
        ValueError: non-uniform grid
        NormalizationError: flat input
    """
    f = spec.freqs
    steps = np.diff(f)
    if len(steps) == 0 or np.max(np.abs(steps - steps.mean())) > 1e-6 * steps.mean():
        raise ValueError("integrate_spectrum needs a uniform frequency grid")

    cumulative = integrate.cumulative_trapezoid(spec.i_phase, f, initial=0.0)
    low, high = float(np.min(cumulative)), float(np.max(cumulative))
    if high - low == 0:
        raise NormalizationError("spectrum is constant; normalization undefined")

    normalized = (cumulative - low) / (high - low)
    ends = 0.5 * (normalized[0] + normalized[-1])
    if ends < 0.5:
        normalized = 1.0 - normalized
    return normalized


def measure_discriminator_slope(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    det: DetectorConfig,
    lockin_cfg: LockinConfig,
    fc: float,
    step: float,
    dwell: float,
) -> float:
    """Noiseless finite-difference slope dI/dfc of the settled lock-in output at fc."""
    quiet = NoiseConfig()
    i_lo, _ = settled_lockin_mean(params, drive.with_carrier(fc - step), field, quiet, det,
                                  lockin_cfg, dwell)
    i_hi, _ = settled_lockin_mean(params, drive.with_carrier(fc + step), field, quiet, det,
                                  lockin_cfg, dwell)
    return (i_hi - i_lo) / (2.0 * step)


def calibrate_phase(
    params: NVEnsembleParams,
    drive: FmDriveConfig,
    field: FieldProfile,
    det: DetectorConfig,
    lockin_cfg: LockinConfig,
    f_line: float,
) -> float:
    """Auto-phase on a noiseless record half a linewidth above f_line."""
    dwell = max(2 * SETTLE_TAUS * lockin_cfg.tau, 0.2)
    calib = synthesize(params, drive.with_carrier(f_line + 0.5 * params.linewidth), field,
                       NoiseConfig(), det, dwell)
    return auto_phase(high_pass(calib, lockin_cfg.hp_cutoff), lockin_cfg)
