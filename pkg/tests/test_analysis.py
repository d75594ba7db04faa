import numpy as np
import pytest
from scipy import stats

from core.constants import ONE_SIGMA_CI
from qmagpi.analysis import (
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
    sensitivity_esr,
    shot_noise_sensitivity,
    square_wave_levels,
)
from qmagpi.field_profiles import SquareProfile
from qmagpi.lockin import lowpass_response
from qmagpi.pi_lock import open_loop_run
from qmagpi.signal_synth import NoiseConfig
from qmagpi.timeseries import TimeSeries

GAMMA_E = 28.024e9


def _series(values, dt=1.0, unit='V'):
    return TimeSeries(0.0, dt, np.asarray(values, dtype=float), unit)


def _brute_force_avar(y, m):
    averages = np.array([np.mean(y[i:i + m]) for i in range(len(y) - m + 1)])
    pairs = [(averages[i + m] - averages[i]) ** 2 for i in range(len(y) - 2 * m + 1)]
    return sum(pairs) / (2.0 * len(pairs))


# ========== Sensitivity ==========

def test_sensitivity_esr_reference_value():
    eta = sensitivity_esr(15e-6, 10e-3, 2.20e-9, GAMMA_E)
    assert eta == pytest.approx(2.43e-8, rel=0.01)
    assert sensitivity_esr(15e-6, 10e-3, 4.40e-9, GAMMA_E) == pytest.approx(eta / 2)
    assert sensitivity_esr(0.0, 10e-3, 2.20e-9, GAMMA_E) == 0.0
    with pytest.raises(ValueError):
        sensitivity_esr(15e-6, 10e-3, 0.0, GAMMA_E)


def test_sensitivity_report():
    report = SensitivityReport.from_values(15e-6, 10e-3, 2.20e-9, GAMMA_E)
    assert report.eta == sensitivity_esr(15e-6, 10e-3, 2.20e-9, GAMMA_E)
    assert report.to_dict() == {
        'eta_T_rtHz': report.eta,
        'sigma_v': 15e-6,
        'tau_s': 10e-3,
        'slope_v_per_hz': 2.20e-9,
        'gamma_e_hz_per_t': GAMMA_E,
    }


def test_shot_noise_sensitivity():
    eta = shot_noise_sensitivity(GAMMA_E, 1.0e6, 0.0015, 7.5e14)
    assert eta == pytest.approx(6.7e-10, rel=0.05)
    assert shot_noise_sensitivity(GAMMA_E, 1.0e6, 0.003, 7.5e14) == pytest.approx(eta / 2)
    assert shot_noise_sensitivity(GAMMA_E, 1.0e6, 0.0015, 7.5e16) == pytest.approx(eta / 10)
    with pytest.raises(ValueError):
        shot_noise_sensitivity(GAMMA_E, 1.0e6, 1.5, 7.5e14)


def test_fluctuation_sensitivity():
    assert fluctuation_sensitivity(11e-9, 10e-3) == pytest.approx(11e-9 * np.sqrt(0.02))


# ========== Power spectral density ==========

def test_parseval_on_averaged_white_noise(rng):
    spectra = [psd(_series(rng.normal(0.0, 1.0, 4096), dt=1e-3)) for _ in range(50)]
    mean = average_psd(spectra)
    assert mean.total_power() == pytest.approx(1.0, rel=0.02)
    assert mean.segment_count == sum(s.segment_count for s in spectra)
    assert mean.window_name == 'hann'


@pytest.mark.parametrize('window', ['hann', 'boxcar', 'blackman'])
def test_parseval_holds_for_any_window(rng, window):
    x = rng.normal(0.0, 2.0, 32768)
    result = psd(_series(x, dt=1e-3), window=window)
    assert result.total_power() == pytest.approx(np.var(x), rel=0.03)


def test_sine_peak_power():
    n, fs = 4096, 1000.0
    f0 = 100 * fs / n
    t = np.arange(n) / fs
    result = psd(_series(0.3 * np.sin(2 * np.pi * f0 * t), dt=1 / fs), segments=1)
    peak = slice(97, 104)
    assert np.sum(result.psd_v[peak]) * result.df == pytest.approx(0.3 ** 2 / 2, rel=0.02)


def test_psd_ignores_constant_offset(rng):
    x = rng.normal(0.0, 1.0, 8192)
    a = psd(_series(x))
    b = psd(_series(x + 7.5))
    np.testing.assert_allclose(b.psd_v[1:], a.psd_v[1:], rtol=1e-9, atol=1e-12)


def test_psd_field_scaling_and_deembedding(rng):
    ts = _series(rng.normal(0.0, 1e-5, 8192), dt=1 / 1923)
    plain = psd(ts)
    scaled = psd(ts, zc_slope=-1.3e-9, gamma_e=GAMMA_E, lockin_tau=10e-3)
    np.testing.assert_allclose(scaled.psd_v, plain.psd_v / lowpass_response(plain.freqs, 10e-3))
    np.testing.assert_allclose(scaled.psd_b, scaled.psd_v / (1.3e-9 * GAMMA_E) ** 2)
    with pytest.raises(ValueError):
        psd(ts, zc_slope=1e-9)


def test_psd_argument_checks():
    with pytest.raises(ValueError):
        psd(_series(np.zeros(10)), segments=0)
    with pytest.raises(ValueError):
        psd(_series(np.zeros(10)), segments=8)


def test_noise_floor_of_flat_spectrum():
    freqs = np.linspace(0.0, 500.0, 501)
    flat = PsdResult(freqs, np.full(501, 1e-12), np.full(501, 2e-18))
    floor = noise_floor(flat)
    assert floor.mean_psd == pytest.approx(2e-18)
    assert floor.sensitivity == pytest.approx(1e-9)
    with pytest.raises(ValueError):
        noise_floor(PsdResult(freqs, np.ones(501)))


def test_average_psd_needs_common_grid():
    a = PsdResult(np.arange(5.0), np.ones(5))
    b = PsdResult(np.arange(6.0), np.ones(6))
    with pytest.raises(ValueError):
        average_psd([a, b])
    with pytest.raises(ValueError):
        average_psd([])


# ========== Allan deviation ==========

def test_allan_matches_brute_force():
    y = np.array([0.3, -1.2, 0.8, 2.1, -0.4, 0.0, 1.7, -0.9, 0.5, 0.2, -1.5, 1.1])
    result = overlapping_allan(_series(y, dt=0.5), [0.5, 1.0, 3.0])
    for dev, m in zip(result.adev, (1, 2, 6)):
        expected = np.sqrt(_brute_force_avar(y, m))
        assert dev == pytest.approx(expected, rel=1e-12)
    np.testing.assert_array_equal(result.n_samples, [11, 9, 1])


def test_allan_half_record_is_single_difference():
    y = np.arange(8.0) ** 2
    result = overlapping_allan(_series(y), [4.0])
    expected = abs(np.mean(y[4:]) - np.mean(y[:4])) / np.sqrt(2.0)
    assert result.adev[0] == pytest.approx(expected, rel=1e-12)


def test_white_noise_slope(rng):
    ts = _series(rng.normal(0.0, 1.0, 100000), dt=1e-3)
    result = overlapping_allan(ts, [1e-3, 2e-3, 5e-3, 1e-2])
    assert result.slope(1e-3, 1e-2) == pytest.approx(-0.5, abs=0.025)
    flat = allan_sensitivity(result)
    assert np.max(flat) / np.min(flat) < 1.1
    assert np.all(result.ci_low <= result.adev)
    assert np.all(result.adev <= result.ci_high)


def test_linear_drift():
    c, dt = 3e-3, 0.01
    ts = _series(c * dt * np.arange(5000), dt=dt)
    taus = np.array([0.1, 1.0, 10.0])
    result = overlapping_allan(ts, taus)
    np.testing.assert_allclose(result.adev, c * taus / np.sqrt(2.0), rtol=0.02)


def test_allan_errors():
    ts = _series(np.ones(20), dt=0.1)
    with pytest.raises(ValueError):
        overlapping_allan(ts, [0.15])
    with pytest.raises(ValueError):
        overlapping_allan(ts, [1.1])
    with pytest.raises(ValueError):
        overlapping_allan(ts, [0.1], edf_mode='bogus')


def test_conservative_edf(rng):
    ts = _series(rng.normal(0.0, 1.0, 1000))
    result = overlapping_allan(ts, [1.0, 10.0], edf_mode='conservative')
    np.testing.assert_array_equal(result.edf, result.n_samples - 1)


def test_octave_taus():
    taus = octave_taus(_series(np.zeros(100), dt=0.5))
    np.testing.assert_allclose(taus, [0.5, 1.0, 2.0, 4.0, 8.0, 16.0])


def test_interval_is_chi_squared(rng):
    result = overlapping_allan(_series(rng.normal(0.0, 1.0, 1000)), [1.0, 10.0, 100.0])
    tail = (1.0 - ONE_SIGMA_CI) / 2.0
    low = result.adev * np.sqrt(result.edf / stats.chi2.ppf(1.0 - tail, result.edf))
    high = result.adev * np.sqrt(result.edf / stats.chi2.ppf(tail, result.edf))
    np.testing.assert_allclose(result.ci_low, low, rtol=1e-9)
    np.testing.assert_allclose(result.ci_high, high, rtol=1e-9)
    assert np.all(np.diff(result.edf) < 0)


def test_greenhall_edf(rng):
    ts = _series(rng.normal(0.0, 1.0, 4000), dt=0.01)
    white = overlapping_allan(ts, [0.01, 0.1, 1.0])
    greenhall = overlapping_allan(ts, [0.01, 0.1, 1.0], edf_mode='greenhall')
    np.testing.assert_allclose(greenhall.adev, white.adev)
    assert np.all(greenhall.edf >= 1.0)
    assert np.all(greenhall.ci_low < greenhall.adev)
    assert np.all(greenhall.adev < greenhall.ci_high)


# ========== Distribution fits ==========

def test_gaussian_fit_recovers_sigma(rng):
    values = rng.normal(0.0, 11e-9, 1900)
    fit = gaussian_fit(_series(values, unit='T'))
    assert fit.sigma == pytest.approx(11e-9, rel=0.05)
    assert fit.sigma_robust == pytest.approx(fit.sigma, rel=0.05)
    assert not fit.flagged
    assert fit.counts.sum() == 1900


def test_gaussian_fit_constant_record():
    fit = gaussian_fit(np.full(200, 4.0))
    assert fit.mean == 4.0
    assert fit.sigma == 0.0
    assert fit.flagged


def test_gaussian_fit_reports_total_spread(rng):
    values = np.concatenate([rng.normal(5.0, 2.0, 1000), rng.normal(-5.0, 2.0, 1000)])
    assert gaussian_fit(values).sigma > 5.0


def test_gaussian_fit_needs_samples():
    with pytest.raises(ValueError):
        gaussian_fit(np.zeros(50))


def test_square_wave_levels_and_residuals(rng):
    dt = 1e-3
    t = np.arange(4000) * dt
    clean = 0.2 + np.where(np.mod(t * 2.0, 1.0) < 0.5, 50e-9, -50e-9)
    ts = _series(clean + rng.normal(0.0, 5e-9, len(t)), dt=dt, unit='T')
    high, low = square_wave_levels(ts, 2.0, settle=0.05)
    assert (high - low) / 2 == pytest.approx(50e-9, rel=0.02)
    residual = residual_fluctuation(ts, 2.0, 50e-9, offset=0.2, settle=0.05)
    assert len(residual) == pytest.approx(0.8 * len(t), rel=0.01)
    assert np.std(residual) == pytest.approx(5e-9, rel=0.05)
    with pytest.raises(ValueError):
        square_wave_levels(ts, 2.0, settle=0.3)


# ========== Consistency on simulated records ==========

@pytest.mark.slow
def test_esr_and_psd_floor_agree(locked):
    record = open_loop_run(locked, 10.0)
    error = TimeSeries(float(record.time[0]), record.dt, record.error, 'V')
    settled = error.slice_time(error.t0 + 5 * locked.lockin_cfg.tau)
    tau = locked.lockin_cfg.tau
    eta_esr = sensitivity_esr(float(np.std(settled.values)), tau, abs(locked.zc_slope), GAMMA_E)
    spectrum = psd(settled, zc_slope=locked.zc_slope, gamma_e=GAMMA_E, lockin_tau=tau)
    eta_psd = noise_floor(spectrum).sensitivity
    assert 0.5 < eta_esr / eta_psd < 2.0


@pytest.mark.slow
def test_shot_noise_floor_matches_formula(locked, params):
    shot_only = locked.with_noise(NoiseConfig(shot_noise=True, seed=17))
    record = open_loop_run(shot_only, 10.0)
    error = TimeSeries(float(record.time[0]), record.dt, record.error, 'V')
    settled = error.slice_time(error.t0 + 0.05)
    spectrum = psd(settled, zc_slope=locked.zc_slope, gamma_e=GAMMA_E,
                   lockin_tau=locked.lockin_cfg.tau)
    limit = shot_noise_sensitivity(GAMMA_E, params.linewidth, params.contrast, params.photon_rate)
    assert 0.5 < noise_floor(spectrum).sensitivity / limit < 2.0


@pytest.mark.slow
def test_three_sensitivity_estimates_agree(locked, bias):
    amplitude, frequency = 50e-9, 2.0
    tau = locked.lockin_cfg.tau
    settle = 5 * tau
    square = SquareProfile(amplitude, frequency, axis_index=0, bias=bias.vector)
    record = open_loop_run(locked.with_field(square), 10.0)
    keep = record.time >= record.time[0] + settle
    t0 = float(record.time[keep][0])

    field = TimeSeries(t0, record.dt, record.field_estimate[keep], 'T')
    high, low = square_wave_levels(field, frequency, settle=settle)
    residual = residual_fluctuation(field, frequency, 0.5 * (high - low),
                                    offset=0.5 * (high + low), settle=settle)
    sigma_b = gaussian_fit(residual).sigma
    eta_fluct = fluctuation_sensitivity(sigma_b, tau)
    eta_esr = sensitivity_esr(sigma_b * abs(locked.zc_slope) * GAMMA_E, tau,
                              abs(locked.zc_slope), GAMMA_E)

    quiet = open_loop_run(locked, 10.0)
    error = TimeSeries(float(quiet.time[0]), quiet.dt, quiet.error, 'V').slice_time(
        float(quiet.time[0]) + settle)
    spectrum = psd(error, zc_slope=locked.zc_slope, gamma_e=GAMMA_E, lockin_tau=tau)
    eta_psd = noise_floor(spectrum).sensitivity

    for a, b in ((eta_esr, eta_psd), (eta_esr, eta_fluct), (eta_fluct, eta_psd)):
        assert 0.5 < a / b < 2.0
