"""Shared fixtures: nominal sensor, noiseless and nominal-noise configs, a locked scenario."""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.constants import BIAS_PROJECTIONS_T
from core.nv_model import NVEnsembleParams, bias_for_projections
from qmagpi.field_profiles import ConstantProfile
from qmagpi.lockin import LockinConfig
from qmagpi.pi_lock import acquire_lock, locked_line_guess
from qmagpi.signal_synth import DetectorConfig, FmDriveConfig, NoiseConfig


@pytest.fixture(scope="session")
def params():
    return NVEnsembleParams.nominal()


@pytest.fixture(scope="session")
def bias():
    return bias_for_projections(BIAS_PROJECTIONS_T)


@pytest.fixture(scope="session")
def f_line(params, bias):
    return locked_line_guess(params, bias)


@pytest.fixture(scope="session")
def zero_field(bias):
    return ConstantProfile(0.0, axis_index=0, bias=bias.vector)


@pytest.fixture(scope="session")
def drive(f_line):
    return FmDriveConfig(fc=f_line, fdev=400e3, fm=1e3)


@pytest.fixture(scope="session")
def det():
    return DetectorConfig()


@pytest.fixture(scope="session")
def lockin_cfg():
    return LockinConfig()


@pytest.fixture(scope="session")
def quiet():
    return NoiseConfig()


@pytest.fixture(scope="session")
def nominal_noise():
    return NoiseConfig.nominal(seed=11)


@pytest.fixture(scope="session")
def locked(params, drive, zero_field, det, lockin_cfg, nominal_noise):
    """Lock on the isolated axis-0 line with a negative discriminator slope."""
    scenario, fit = acquire_lock(params, drive, zero_field, nominal_noise, det, lockin_cfg,
                                 f_guess=drive.fc, gain_sign=-1.0)
    return scenario


@pytest.fixture(scope="session")
def locked_quiet(locked, quiet):
    return locked.with_noise(quiet)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
