"""
ScenarioRunner - executes one configured scenario and records how it ran.

Writes the scenario's CSV files (through its handler), summary.json with the
figures of merit and manifest.json with everything needed to reproduce them.
"""

import json
import logging
import os
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from core.constants import (
    DEFAULT_OUTPUT_DIR,
    MANIFEST_FILE,
    OUTPUT_ENV_VAR,
    RESULT_STATUS_COMPLETE,
    RESULT_STATUS_FAILED,
    SUMMARY_FILE,
)
from . import __version__
from .config import ScenarioConfig
from .host_info import get_host_info, get_library_versions, peak_rss_mb
from .scenarios import SCENARIOS

logger = logging.getLogger(__name__)


def resolve_output_root(flag: Optional[str], config: ScenarioConfig) -> Path:
    """--out flag, then $QMAGPI_OUT, then the config's output_dir, then ./qmagpi_out."""
    for candidate in (flag, os.environ.get(OUTPUT_ENV_VAR), config.output_dir):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUTPUT_DIR)


def _to_json(value: Any):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=_to_json) + "\n")
    return path


class ScenarioRunner:
    """Runs a scenario into <output_root>/<scenario>/."""

    def __init__(self, config: ScenarioConfig, output_root: Union[str, Path]):
        self.config = config
        self.output_root = Path(output_root)

    @property
    def out_dir(self) -> Path:
        return self.output_root / self.config.scenario

    def _manifest(self, status: str, elapsed: float) -> Dict[str, Any]:
        return {
            'scenario': self.config.scenario,
            'status': status,
            'seed': self.config.seed,
            'version': __version__,
            'timestamp_utc': datetime.now(timezone.utc).isoformat(),
            'elapsed_s': round(elapsed, 3),
            'peak_rss_mb': round(peak_rss_mb(), 1),
            'host': get_host_info(),
            'libraries': get_library_versions(),
            'config': self.config.to_dict(),
            'config_source': self.config.source,
        }

    def run(self) -> Dict[str, Any]:
        """
        Execute the scenario.

        Returns:
            The summary dictionary written to summary.json

        Raises:
            Whatever the scenario handler raises, after a failed manifest is written
        """
        scenario = self.config.scenario
        handler = SCENARIOS[scenario]
        out_dir = self.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)

        start_time = time.time()
        logger.info(f"Running {scenario} scenario (seed {self.config.seed}) into {out_dir}")

        try:
            summary = handler(self.config, out_dir)
        except Exception as e:
            elapsed = time.time() - start_time
            logger.error(f"Scenario {scenario} failed after {elapsed:.1f}s: {e}", exc_info=True)
            manifest = self._manifest(RESULT_STATUS_FAILED, elapsed)
            manifest['remark'] = str(e)
            write_json(out_dir / MANIFEST_FILE, manifest)
            raise

        elapsed = time.time() - start_time
        write_json(out_dir / SUMMARY_FILE, summary)
        write_json(out_dir / MANIFEST_FILE, self._manifest(RESULT_STATUS_COMPLETE, elapsed))
        logger.info(f"Scenario {scenario} completed successfully in {elapsed:.1f}s")
        return summary
