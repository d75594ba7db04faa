"""Uniformly sampled signals and the CSV helpers shared by every result writer."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeSeries:
    t0: float
    dt: float
    values: np.ndarray
    unit: str = ''

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("TimeSeries values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("TimeSeries values must be finite")
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def rate(self) -> float:
        return 1.0 / self.dt

    @property
    def duration(self) -> float:
        return self.dt * len(self.values)

    def with_values(self, values, unit=None) -> 'TimeSeries':
        return TimeSeries(self.t0, self.dt, values, self.unit if unit is None else unit)

    def slice_time(self, start: float, stop: float = None) -> 'TimeSeries':
        t = self.times
        mask = t >= start
        if stop is not None:
            mask &= t < stop
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            raise ValueError(f"no samples in [{start}, {stop})")
        return TimeSeries(float(t[idx[0]]), self.dt, self.values[idx], self.unit)


def write_csv(path: Union[str, Path], header: Sequence[str], columns: Iterable[Sequence[float]]):
    """Write equal-length columns under a mandatory header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c, dtype=float) for c in columns]
    if len(cols) != len(header):
        raise ValueError(f"{len(header)} header names for {len(cols)} columns")
    if len({len(c) for c in cols}) > 1:
        raise ValueError("CSV columns must have equal lengths")

    frame = pd.DataFrame(dict(zip(header, cols)), columns=list(header))
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Union[str, Path], header: Sequence[str]) -> Dict[str, np.ndarray]:
    """Read a headered CSV, requiring exactly the given column names."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path} is empty")
    found = [str(c).strip() for c in frame.columns]
    if found != list(header):
        raise ValueError(f"{path}: expected header {','.join(header)}, got {','.join(found)}")

    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if len(bad):
        row = int(bad[0])
        raise ValueError(f"{path}:{row + 2}: non-numeric value in {frame.iloc[row].tolist()}")
    return {name: numeric.iloc[:, i].to_numpy(dtype=float) for i, name in enumerate(header)}
