"""Exception types raised across the simulator and analysis toolkit."""

from typing import Optional


class ConfigError(ValueError):
    """Invalid scenario configuration; names the offending key and file."""

    def __init__(self, message: str, key: Optional[str] = None, location: Optional[str] = None):
        self.key = key
        self.location = location
        where = []
        if key:
            where.append(f"key '{key}'")
        if location:
            where.append(f"in {location}")
        super().__init__(f"{message} ({' '.join(where)})" if where else message)


class ResourceGuardError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


class NoPhaseFoundError(RuntimeError):
    pass


class FitFailedError(RuntimeError):
    """Non-convergence of the triplet fit; carries the last iterate and its residual."""

    def __init__(self, message: str, last_iterate=None, residual_rms: float = float('nan')):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_rms = residual_rms
