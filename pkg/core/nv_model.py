"""
Static physics of the NV ensemble.

Resonance frequencies follow the first-order Zeeman law
f = D + dD/dT * dT + s * gamma_e * |B . n| + h * A_hf for each of the four
{111} axes, both ms = 0 -> +/-1 branches and the three 14N hyperfine lines.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from core.constants import (
    BRANCHES,
    CONTRAST,
    DDDT_HZ_PER_K,
    GAMMA_E_HZ_PER_T,
    HYPERFINE_INDICES,
    HYPERFINE_SPLIT_HZ,
    LINEWIDTH_HZ,
    MAX_BIAS_FIELD_T,
    PHOTON_RATE,
    ZERO_FIELD_SPLITTING_HZ,
)

logger = logging.getLogger(__name__)

_AXIS_TOLERANCE = 1e-12


def nv_axes() -> np.ndarray:
    """Return the four {111} NV axes as a (4, 3) array of unit vectors."""
    axes = np.array(
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    )
    return axes / np.sqrt(3.0)


@dataclass(frozen=True)
class NVEnsembleParams:
    """Physical constants and lineshape parameters of the sensor."""

    D: float = ZERO_FIELD_SPLITTING_HZ
    gamma_e: float = GAMMA_E_HZ_PER_T
    A_hf: float = HYPERFINE_SPLIT_HZ
    linewidth: float = LINEWIDTH_HZ
    contrast: float = CONTRAST
    photon_rate: float = PHOTON_RATE
    dDdT: float = DDDT_HZ_PER_K
    axes: Tuple[Tuple[float, float, float], ...] = field(
        default_factory=lambda: tuple(tuple(a) for a in nv_axes())
    )

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError(f"D must be positive, got {self.D}")
        if not self.gamma_e > 0:
            raise ValueError(f"gamma_e must be positive, got {self.gamma_e}")
        if not self.linewidth > 0:
            raise ValueError(f"linewidth must be positive, got {self.linewidth}")
        if not 0 <= self.contrast < 1:
            raise ValueError(f"contrast must lie in [0, 1), got {self.contrast}")
        if not self.photon_rate > 0:
            raise ValueError(f"photon_rate must be positive, got {self.photon_rate}")
        if not np.isfinite(self.dDdT):
            raise ValueError("dDdT must be finite")

        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (4, 3):
            raise ValueError(f"axes must be four 3-vectors, got shape {axes.shape}")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(np.abs(norms - 1.0) > _AXIS_TOLERANCE):
            raise ValueError(f"axes must have unit norm, got norms {norms}")
        gram = axes @ axes.T
        off_diag = np.abs(gram[~np.eye(4, dtype=bool)])
        if np.any(np.abs(off_diag - 1.0 / 3.0) > _AXIS_TOLERANCE):
            raise ValueError("axes must form a tetrahedral {111} family")

    @classmethod
    def nominal(cls) -> 'NVEnsembleParams':
        return cls()

    @property
    def axes_array(self) -> np.ndarray:
        return np.asarray(self.axes, dtype=float)

    @property
    def tesla_per_kelvin(self) -> float:
        """Field that shifts a line by the same amount as a 1 K temperature change."""
        return abs(self.dDdT) / self.gamma_e

    def field_to_frequency(self, b):
        return np.asarray(b) * self.gamma_e

    def frequency_to_field(self, f):
        return np.asarray(f) / self.gamma_e


@dataclass(frozen=True)
class BiasField:
    vector: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        if v.shape != (3,):
            raise ValueError(f"bias field must be a 3-vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"bias field must be finite, got {self.vector}")
        magnitude = float(np.linalg.norm(v))
        if magnitude >= MAX_BIAS_FIELD_T:
            raise ValueError(
                f"|B| = {magnitude:.4g} T exceeds the first-order Zeeman bound "
                f"of {MAX_BIAS_FIELD_T} T"
            )

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=float)


@dataclass(frozen=True)
class ResonanceLine:
    frequency: float
    axis_index: int
    branch: int
    hyperfine_index: int
    relative_amplitude: float = 1.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"line frequency must be positive, got {self.frequency}")
        if self.relative_amplitude < 0:
            raise ValueError("relative_amplitude must be non-negative")
        if self.axis_index not in range(4):
            raise ValueError(f"axis_index must be 0-3, got {self.axis_index}")
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be +1 or -1, got {self.branch}")
        if self.hyperfine_index not in HYPERFINE_INDICES:
            raise ValueError(f"hyperfine_index must be -1, 0 or 1, got {self.hyperfine_index}")


def bias_for_projections(projections: Sequence[float], axes=None) -> BiasField:
    """
    Build the bias field whose projection onto each NV axis equals the given value.

    Args:
        projections: Four projections (T); must sum to zero since the axes do
        axes: Optional (4, 3) axes, defaults to nv_axes()

    Returns:
        BiasField with B . n_k == projections[k]
    """
    p = np.asarray(projections, dtype=float)
    if p.shape != (4,):
        raise ValueError(f"expected four projections, got {p.shape}")
    if abs(p.sum()) > 1e-9 * max(1.0, np.abs(p).max()):
        raise ValueError(f"projections must sum to zero, got sum {p.sum():.3g}")
    n = nv_axes() if axes is None else np.asarray(axes, dtype=float)
    # sum_k n_k n_k^T = (4/3) I for a tetrahedral family
    return BiasField(tuple(0.75 * (p @ n)))


def resonance_frequencies(
    params: NVEnsembleParams, field: BiasField, deltaT: float = 0.0
) -> List[ResonanceLine]:
    """All 24 ODMR lines (4 axes x 2 branches x 3 hyperfine), sorted ascending."""
    b = np.asarray(field.vector, dtype=float)
    if not np.all(np.isfinite(b)) or not np.isfinite(deltaT):
        raise ValueError("field and temperature offset must be finite")

    projections = np.abs(params.axes_array @ b)
    base = params.D + params.dDdT * deltaT
    lines = []
    for axis_index, proj in enumerate(projections):
        for branch in BRANCHES:
            for h in HYPERFINE_INDICES:
                f = base + branch * params.gamma_e * proj + h * params.A_hf
                lines.append(ResonanceLine(float(f), axis_index, branch, h, 1.0))
    lines.sort(key=lambda line: line.frequency)
    return lines


def line_frequency_matrix(
    params: NVEnsembleParams, fields: np.ndarray, offsets_hz: np.ndarray
) -> np.ndarray:
    """
    Vectorized line frequencies for a time-varying field.

    Args:
        fields: (n, 3) field vectors, T
        offsets_hz: (n,) common shift of every line (temperature and drift), Hz

    Returns:
        (24, n) array ordered axis-major, then branch, then hyperfine index
    """
    projections = np.abs(fields @ params.axes_array.T).T  # (4, n)
    base = params.D + offsets_hz
    rows = []
    for axis_index in range(4):
        zeeman = params.gamma_e * projections[axis_index]
        for branch in BRANCHES:
            for h in HYPERFINE_INDICES:
                rows.append(base + branch * zeeman + h * params.A_hf)
    return np.vstack(rows)


def lorentzian(f, f0, linewidth):
    half = 0.5 * linewidth
    return half ** 2 / ((f - f0) ** 2 + half ** 2)


def odmr_fluorescence(params: NVEnsembleParams, lines: Sequence[ResonanceLine], f_mw):
    """
    Relative photoluminescence at microwave frequency f_mw.

    PL = 1 - sum_i C * amp_i * L(f_mw; f_i, linewidth). Accepts scalar or array f_mw.
    """
    if len(lines) == 0:
        raise ValueError("at least one resonance line is required")
    f = np.asarray(f_mw, dtype=float)
    if np.any(f <= 0):
        raise ValueError("microwave frequency must be positive")

    dip = np.zeros_like(f)
    for line in lines:
        dip = dip + line.relative_amplitude * lorentzian(f, line.frequency, params.linewidth)
    pl = 1.0 - params.contrast * dip
    return float(pl) if pl.ndim == 0 else pl


def fluorescence_matrix(params: NVEnsembleParams, line_freqs: np.ndarray, f_mw: np.ndarray):
    """PL for per-sample line sets: line_freqs (24, n), f_mw (n,)."""
    dip = lorentzian(f_mw[np.newaxis, :], line_freqs, params.linewidth).sum(axis=0)
    return 1.0 - params.contrast * dip
