import numpy as np
import pytest

from core.constants import BIAS_PROJECTIONS_T
from core.nv_model import (
    BiasField,
    NVEnsembleParams,
    ResonanceLine,
    bias_for_projections,
    line_frequency_matrix,
    nv_axes,
    odmr_fluorescence,
    resonance_frequencies,
)


def test_axes_are_tetrahedral():
    axes = nv_axes()
    assert axes.shape == (4, 3)
    np.testing.assert_allclose(axes[0], np.ones(3) / np.sqrt(3.0), atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(axes, axis=1), 1.0, atol=1e-12)
    assert np.dot(axes[0], axes[1]) == pytest.approx(-1.0 / 3.0, abs=1e-12)
    np.testing.assert_allclose(axes.sum(axis=0), 0.0, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        NVEnsembleParams(linewidth=0.0)
    with pytest.raises(ValueError):
        NVEnsembleParams(contrast=1.0)
    with pytest.raises(ValueError):
        NVEnsembleParams(photon_rate=0.0)
    bad_axes = ((1.0, 0.0, 0.0),) * 4
    with pytest.raises(ValueError):
        NVEnsembleParams(axes=bad_axes)


def test_bias_field_guard():
    with pytest.raises(ValueError):
        BiasField((0.02, 0.0, 0.0))
    with pytest.raises(ValueError):
        BiasField((np.nan, 0.0, 0.0))


def test_field_frequency_conversion():
    params = NVEnsembleParams.nominal()
    assert params.field_to_frequency(1e-6) == pytest.approx(28.024e3)
    assert params.frequency_to_field(params.field_to_frequency(3e-6)) == pytest.approx(3e-6)
    assert params.tesla_per_kelvin == pytest.approx(74e3 / 28.024e9, rel=1e-9)


def test_zero_field_degeneracy():
    params = NVEnsembleParams.nominal()
    lines = resonance_frequencies(params, BiasField())
    assert len(lines) == 24
    freqs = np.array([line.frequency for line in lines])
    distinct = np.unique(np.round(freqs, 3))
    np.testing.assert_allclose(distinct, params.D + np.array([-1, 0, 1]) * params.A_hf)
    for value in distinct:
        assert np.count_nonzero(np.isclose(freqs, value)) == 8


def test_field_along_axis_zero():
    params = NVEnsembleParams.nominal()
    field = BiasField(tuple(1e-3 * nv_axes()[0]))
    lines = resonance_frequencies(params, field)
    centers = {(l.axis_index, l.branch): l.frequency for l in lines if l.hyperfine_index == 0}
    assert centers[(0, 1)] == pytest.approx(params.D + 28.024e6, abs=1.0)
    assert centers[(0, -1)] == pytest.approx(params.D - 28.024e6, abs=1.0)
    for axis in (1, 2, 3):
        assert centers[(axis, 1)] == pytest.approx(params.D + 9.3413e6, abs=100.0)
        assert centers[(axis, -1)] == pytest.approx(params.D - 9.3413e6, abs=100.0)


def test_field_sign_flip_keeps_lines():
    params = NVEnsembleParams.nominal()
    bias = bias_for_projections(BIAS_PROJECTIONS_T)
    flipped = BiasField(tuple(-bias.array))
    forward = [l.frequency for l in resonance_frequencies(params, bias)]
    backward = [l.frequency for l in resonance_frequencies(params, flipped)]
    np.testing.assert_allclose(forward, backward, rtol=0, atol=1e-6)


@pytest.mark.parametrize("k", [0.5, 2.0, 3.0])
def test_branch_offsets_scale_with_field(k):
    params = NVEnsembleParams.nominal()
    bias = bias_for_projections(BIAS_PROJECTIONS_T)
    scaled = BiasField(tuple(k * bias.array))

    def offsets(field):
        return {
            (l.axis_index, l.branch, l.hyperfine_index): l.frequency
            - params.D
            - l.hyperfine_index * params.A_hf
            for l in resonance_frequencies(params, field)
        }

    base, stretched = offsets(bias), offsets(scaled)
    for key, value in base.items():
        assert stretched[key] == pytest.approx(k * value, rel=1e-9, abs=1e-3)


def test_fluorescence_even_about_center():
    params = NVEnsembleParams.nominal()
    line = [ResonanceLine(2.85e9, 0, 1, 0)]
    delta = np.linspace(0.0, 5 * params.linewidth, 11)
    above = odmr_fluorescence(params, line, 2.85e9 + delta)
    below = odmr_fluorescence(params, line, 2.85e9 - delta)
    np.testing.assert_allclose(above, below, rtol=0, atol=1e-12)


def test_temperature_shift():
    params = NVEnsembleParams.nominal()
    cold = resonance_frequencies(params, BiasField())
    warm = resonance_frequencies(params, BiasField(), deltaT=1.0)
    shifts = [w.frequency - c.frequency for w, c in zip(warm, cold)]
    np.testing.assert_allclose(shifts, -74e3, atol=1e-3)


def test_lines_sorted():
    params = NVEnsembleParams.nominal()
    bias = bias_for_projections(BIAS_PROJECTIONS_T)
    freqs = [l.frequency for l in resonance_frequencies(params, bias)]
    assert freqs == sorted(freqs)


def test_bias_for_projections():
    bias = bias_for_projections(BIAS_PROJECTIONS_T)
    np.testing.assert_allclose(nv_axes() @ bias.array, BIAS_PROJECTIONS_T, atol=1e-15)
    with pytest.raises(ValueError):
        bias_for_projections([1e-3, 0.0, 0.0, 0.0])


def test_locked_line_is_isolated():
    params = NVEnsembleParams.nominal()
    lines = resonance_frequencies(params, bias_for_projections(BIAS_PROJECTIONS_T))
    target = next(l for l in lines
                  if l.axis_index == 0 and l.branch == -1 and l.hyperfine_index == 0)
    assert target.frequency == pytest.approx(2.8525e9, abs=0.1e6)
    others = [l.frequency for l in lines if l.axis_index != 0]
    assert min(abs(f - target.frequency) for f in others) > 15e6


def test_fluorescence_far_detuned():
    params = NVEnsembleParams.nominal()
    lines = resonance_frequencies(params, BiasField())
    pl = odmr_fluorescence(params, lines, params.D + 2000 * params.linewidth)
    assert abs(pl - 1.0) < params.contrast * 1e-5


def test_fluorescence_single_line():
    params = NVEnsembleParams.nominal()
    line = [ResonanceLine(2.85e9, 0, 1, 0)]
    assert odmr_fluorescence(params, line, 2.85e9) == pytest.approx(1.0 - params.contrast)
    half = odmr_fluorescence(params, line, 2.85e9 + 0.5 * params.linewidth)
    assert 1.0 - half == pytest.approx(0.5 * params.contrast, rel=1e-12)


def test_fluorescence_vectorized_matches_scalar():
    params = NVEnsembleParams.nominal()
    lines = resonance_frequencies(params, BiasField())
    f = np.linspace(2.86e9, 2.88e9, 7)
    vec = odmr_fluorescence(params, lines, f)
    assert vec.shape == f.shape
    assert vec[3] == pytest.approx(odmr_fluorescence(params, lines, f[3]))


def test_line_frequency_matrix_matches_list():
    params = NVEnsembleParams.nominal()
    bias = bias_for_projections(BIAS_PROJECTIONS_T)
    matrix = line_frequency_matrix(params, bias.array[np.newaxis, :], np.zeros(1))
    listed = sorted(l.frequency for l in resonance_frequencies(params, bias))
    np.testing.assert_allclose(np.sort(matrix[:, 0]), listed, rtol=0, atol=1e-3)
