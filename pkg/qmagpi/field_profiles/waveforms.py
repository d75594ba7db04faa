"""Analytic test-field profiles: constant, square wave and linear ramp."""

import numpy as np

from core.constants import PROFILE_CONSTANT, PROFILE_RAMP, PROFILE_SQUARE
from .base import FieldProfile


class ConstantProfile(FieldProfile):

    def __init__(self, amplitude: float = 0.0, **kwargs):
        super().__init__(**kwargs)
        if not np.isfinite(amplitude):
            raise ValueError("amplitude must be finite")
        self.amplitude = float(amplitude)

    @property
    def kind(self) -> str:
        return PROFILE_CONSTANT

    def scalar_field(self, t):
        return np.full(np.shape(t), self.amplitude)


class SquareProfile(FieldProfile):
    """Square wave toggling between +amplitude (first half period) and -amplitude."""

    def __init__(self, amplitude: float, frequency: float, **kwargs):
        super().__init__(**kwargs)
        if not np.isfinite(amplitude):
            raise ValueError("amplitude must be finite")
        if not frequency > 0:
            raise ValueError(f"square-wave frequency must be positive, got {frequency}")
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)

    @property
    def kind(self) -> str:
        return PROFILE_SQUARE

    def scalar_field(self, t):
        phase = np.mod(np.asarray(t) * self.frequency, 1.0)
        return np.where(phase < 0.5, self.amplitude, -self.amplitude)


class RampProfile(FieldProfile):
    """amplitude + rate * t"""

    def __init__(self, rate: float, amplitude: float = 0.0, **kwargs):
        super().__init__(**kwargs)
        if not (np.isfinite(rate) and np.isfinite(amplitude)):
            raise ValueError("ramp rate and amplitude must be finite")
        self.rate = float(rate)
        self.amplitude = float(amplitude)

    @property
    def kind(self) -> str:
        return PROFILE_RAMP

    def scalar_field(self, t):
        return self.amplitude + self.rate * np.asarray(t)
