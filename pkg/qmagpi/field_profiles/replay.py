"""
Replayed field profiles.

A replay profile interpolates a uniformly sampled field record. Records come
from CSV files (`t_s,field_T`), from the built-in elevator-shaped generator or
from a staircase of hold levels used by the dynamic-range experiment.
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from core.constants import CSV_HEADER_REPLAY, PROFILE_REPLAY
from ..timeseries import TimeSeries, read_csv, write_csv
from .base import FieldProfile

logger = logging.getLogger(__name__)


class ReplayProfile(FieldProfile):
    """Linear interpolation of a field record; holds the end values outside it."""

    def __init__(self, samples: TimeSeries, **kwargs):
        super().__init__(**kwargs)
        if len(samples) < 2:
            raise ValueError("replay profile needs at least two samples")
        self.samples = samples

    @property
    def kind(self) -> str:
        return PROFILE_REPLAY

    def scalar_field(self, t):
        return np.interp(np.asarray(t, dtype=float), self.samples.times, self.samples.values)

    @classmethod
    def from_csv(cls, path: Union[str, Path], **kwargs) -> 'ReplayProfile':
        return cls(load_replay_csv(path), **kwargs)


def load_replay_csv(path: Union[str, Path]) -> TimeSeries:
    """Read a `t_s,field_T` record; rejects non-uniform spacing."""
    data = read_csv(path, CSV_HEADER_REPLAY)
    t, b = data['t_s'], data['field_T']
    if len(t) < 2:
        raise ValueError(f"{path}: replay record needs at least two rows")
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
        raise ValueError(f"{path}: replay samples must be uniformly spaced")
    logger.info(f"Loaded replay record {path}: {len(t)} samples at dt={dt:.4g}s")
    return TimeSeries(float(t[0]), dt, b, 'T')


def save_replay_csv(path: Union[str, Path], samples: TimeSeries):
    return write_csv(path, CSV_HEADER_REPLAY, [samples.times, samples.values])


def elevator_profile(
    duration: float = 40.0,
    dt: float = 0.01,
    peak: float = 5e-6,
    blip: float = 1.5e-6,
) -> TimeSeries:
    """
    Synthetic elevator pass: approach, peak while the car is level with the
    sensor, a short door blip and the recede.
    """
    if duration <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    t = np.arange(0.0, duration, dt)
    t_arrive, t_leave = 0.3 * duration, 0.7 * duration
    width = 0.05 * duration

    approach = 1.0 / (1.0 + np.exp(-(t - t_arrive) / width))
    recede = 1.0 / (1.0 + np.exp(-(t - t_leave) / width))
    level = peak * (approach - recede)

    # doors open and close while the car is stopped
    t_door = 0.5 * duration
    door = blip * (np.exp(-((t - t_door + 1.0) / 0.3) ** 2)
                   - np.exp(-((t - t_door - 1.0) / 0.3) ** 2))
    return TimeSeries(0.0, dt, level + door, 'T')


def staircase_profile(levels: Sequence[float], hold: float) -> TimeSeries:
    """
    Steps through `levels`, ramping linearly over the first half of each hold
    and holding flat for the second half. Starts from zero field.
    """
    if hold <= 0:
        raise ValueError("hold must be positive")
    levels = np.asarray(levels, dtype=float)
    values = np.concatenate([[0.0], np.repeat(levels, 2)])
    return TimeSeries(0.0, 0.5 * hold, values, 'T')
