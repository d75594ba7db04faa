"""
Base class for applied field profiles.
Every profile maps time to a scalar test field applied along one NV axis,
on top of a static bias vector.
"""

from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from core.nv_model import nv_axes


class FieldProfile(ABC):
    """
    Abstract base class for field profiles.

    Subclasses implement `scalar_field`; the vector field seen by the sensor is
    bias + scalar_field(t) * n[axis_index].
    """

    def __init__(self, axis_index: int = 0, bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)):
        if axis_index not in range(4):
            raise ValueError(f"axis_index must be 0-3, got {axis_index}")
        bias = np.asarray(bias, dtype=float)
        if bias.shape != (3,) or not np.all(np.isfinite(bias)):
            raise ValueError(f"bias must be a finite 3-vector, got {bias}")
        self.axis_index = axis_index
        self.bias = bias

    @property
    @abstractmethod
    def kind(self) -> str:
        """Profile kind name (e.g. 'constant', 'square')"""
        pass

    @abstractmethod
    def scalar_field(self, t: np.ndarray) -> np.ndarray:
        """
        Test field along the selected axis.

        Args:
            t: Sample times, s

        Returns:
            Field values, T
        """
        pass

    def vectors(self, t: np.ndarray, axes: np.ndarray = None) -> np.ndarray:
        """(n, 3) field vectors at times t."""
        axes = nv_axes() if axes is None else np.asarray(axes, dtype=float)
        b = self.scalar_field(np.asarray(t, dtype=float))
        return self.bias[np.newaxis, :] + b[:, np.newaxis] * axes[self.axis_index][np.newaxis, :]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(axis_index={self.axis_index})"
