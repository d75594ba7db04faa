"""
Scenario configuration.

A JSON document maps onto ScenarioConfig: one dataclass per section, every
key checked against the section's fields. Unknown keys, missing required keys,
wrongly typed values and values the domain types reject all raise ConfigError
naming the dotted key and the file.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from core import constants as C
from core.nv_model import BiasField, NVEnsembleParams, bias_for_projections
from .errors import ConfigError
from .field_profiles import FieldProfile, ReplayProfile, build_profile
from .lockin import LockinConfig
from .signal_synth import DetectorConfig, FmDriveConfig, NoiseConfig
from .timeseries import TimeSeries

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NVSection:
    D: float = C.ZERO_FIELD_SPLITTING_HZ
    gamma_e: float = C.GAMMA_E_HZ_PER_T
    A_hf: float = C.HYPERFINE_SPLIT_HZ
    linewidth: float = C.LINEWIDTH_HZ
    contrast: float = C.CONTRAST
    photon_rate: float = C.PHOTON_RATE
    dDdT: float = C.DDDT_HZ_PER_K

    def build(self) -> NVEnsembleParams:
        return NVEnsembleParams(**dataclasses.asdict(self))


@dataclass(frozen=True)
class BiasSection:
    projections_T: Optional[List[float]] = None
    vector_T: Optional[List[float]] = None

    def build(self) -> BiasField:
        if self.projections_T is not None and self.vector_T is not None:
            raise ValueError("give either projections_T or vector_T, not both")
        if self.vector_T is not None:
            return BiasField(tuple(self.vector_T))
        return bias_for_projections(self.projections_T or C.BIAS_PROJECTIONS_T)


@dataclass(frozen=True)
class DriveSection:
    fc: Optional[float] = None
    fdev: float = C.FM_DEVIATION_HZ
    fm: float = C.FM_RATE_HZ

    def build(self, default_fc: float) -> FmDriveConfig:
        return FmDriveConfig(fc=self.fc if self.fc is not None else default_fc,
                             fdev=self.fdev, fm=self.fm)


@dataclass(frozen=True)
class DetectorSection:
    responsivity_gain: float = C.RESPONSIVITY_GAIN
    sample_rate: Optional[float] = None

    def build(self) -> DetectorConfig:
        return DetectorConfig(self.responsivity_gain, self.sample_rate)


@dataclass(frozen=True)
class NoiseSection:
    shot_noise: bool = True
    electronic_psd: float = C.ELECTRONIC_PSD_V2HZ
    drift_rw: float = 0.0
    temperature_ramp_K: float = 0.0

    def build(self, seed: int, duration: float = 0.0) -> NoiseConfig:
        temperature = None
        if self.temperature_ramp_K != 0.0 and duration > 0:
            temperature = TimeSeries(0.0, duration, [0.0, self.temperature_ramp_K], 'K')
        return NoiseConfig(self.shot_noise, self.electronic_psd, self.drift_rw, temperature, seed)


@dataclass(frozen=True)
class LockinSection:
    phase: Optional[float] = None
    tau: float = C.LOCKIN_TAU_S
    hp_cutoff: float = C.HP_CUTOFF_HZ
    out_rate: float = C.OUT_RATE_HZ

    def build(self, fm: float) -> LockinConfig:
        return LockinConfig(fm=fm, phase=self.phase or 0.0, tau=self.tau,
                            hp_cutoff=self.hp_cutoff, out_rate=self.out_rate)


@dataclass(frozen=True)
class PISection:
    kp_native: float = C.PI_KP_NATIVE
    ki_native: float = C.PI_KI_NATIVE
    clamp: float = C.PI_CLAMP_HZ


@dataclass(frozen=True)
class FieldSection:
    kind: str = C.PROFILE_CONSTANT
    amplitude: float = 0.0
    frequency: float = 2.0
    rate: float = 0.0
    replay_csv: Optional[str] = None
    axis_index: int = 0

    def build(self, bias: BiasField, base_dir: Optional[Path] = None) -> FieldProfile:
        common = {'axis_index': self.axis_index, 'bias': bias.vector}
        if self.kind == C.PROFILE_CONSTANT:
            return build_profile(self.kind, amplitude=self.amplitude, **common)
        if self.kind == C.PROFILE_SQUARE:
            return build_profile(self.kind, amplitude=self.amplitude,
                                 frequency=self.frequency, **common)
        if self.kind == C.PROFILE_RAMP:
            return build_profile(self.kind, rate=self.rate, amplitude=self.amplitude, **common)
        if self.kind == C.PROFILE_REPLAY:
            if not self.replay_csv:
                raise ValueError("replay profiles need replay_csv")
            path = Path(self.replay_csv)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return ReplayProfile.from_csv(path, **common)
        raise ValueError(f"unknown field kind '{self.kind}', expected one of {C.PROFILE_VALUES}")


@dataclass(frozen=True)
class SweepSection:
    f_start: float = 2.845e9
    f_stop: float = 2.860e9
    n_points: int = 151
    dwell: float = 0.1
    noise_record: float = 2.0


@dataclass(frozen=True)
class AnalysisSection:
    segments: int = 8
    overlap: float = C.OVERLAP_DEFAULT
    window: str = C.WINDOW_DEFAULT
    band_lo_hz: float = C.NOISE_BAND_HZ[0]
    band_hi_hz: float = C.NOISE_BAND_HZ[1]
    edf_mode: str = C.EDF_WHITE_FM
    confidence: float = C.ONE_SIGMA_CI
    deembed_lockin: bool = True


@dataclass(frozen=True)
class CalibrationSection:
    coil_constant: float = 4.889e-6
    currents: List[float] = dataclasses.field(default_factory=lambda: [-2.0, -1.0, 0.0, 1.0, 2.0])
    span: float = 8e6
    n_points: int = 81
    dwell: float = 0.1


@dataclass(frozen=True)
class DynrangeSection:
    max_field: float = 300e-6
    n_steps: int = 31
    hold: float = 0.4
    kp_native: float = -200.0
    ki_native: float = -200.0
    open_fdev: Optional[float] = None


@dataclass(frozen=True)
class TrackSection:
    n_traces: int = 100
    duration: float = 8.0
    settle: float = 0.125


@dataclass(frozen=True)
class PsdSection:
    n_traces: int = 50
    duration: float = 10.0
    detune: float = 50e6


@dataclass(frozen=True)
class AllanSection:
    duration: float = 40.0
    detune: float = 50e6


@dataclass(frozen=True)
class ReplaySection:
    duration: float = 40.0
    dt: float = 0.01
    peak: float = 5e-6
    blip: float = 1.5e-6
    smooth_sigma: float = 0.0
    csv: Optional[str] = None


_SECTIONS = {
    'nv': NVSection,
    'bias': BiasSection,
    'drive': DriveSection,
    'detector': DetectorSection,
    'noise': NoiseSection,
    'lockin': LockinSection,
    'pi': PISection,
    'field': FieldSection,
    'sweep': SweepSection,
    'analysis': AnalysisSection,
    'calibration': CalibrationSection,
    'dynrange': DynrangeSection,
    'track': TrackSection,
    'psd': PsdSection,
    'allan': AllanSection,
    'replay': ReplaySection,
}


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int = 0
    output_dir: Optional[str] = None
    workers: int = 1
    nv: NVSection = dataclasses.field(default_factory=NVSection)
    bias: BiasSection = dataclasses.field(default_factory=BiasSection)
    drive: DriveSection = dataclasses.field(default_factory=DriveSection)
    detector: DetectorSection = dataclasses.field(default_factory=DetectorSection)
    noise: NoiseSection = dataclasses.field(default_factory=NoiseSection)
    lockin: LockinSection = dataclasses.field(default_factory=LockinSection)
    pi: PISection = dataclasses.field(default_factory=PISection)
    field: FieldSection = dataclasses.field(default_factory=FieldSection)
    sweep: SweepSection = dataclasses.field(default_factory=SweepSection)
    analysis: AnalysisSection = dataclasses.field(default_factory=AnalysisSection)
    calibration: CalibrationSection = dataclasses.field(default_factory=CalibrationSection)
    dynrange: DynrangeSection = dataclasses.field(default_factory=DynrangeSection)
    track: TrackSection = dataclasses.field(default_factory=TrackSection)
    psd: PsdSection = dataclasses.field(default_factory=PsdSection)
    allan: AllanSection = dataclasses.field(default_factory=AllanSection)
    replay: ReplaySection = dataclasses.field(default_factory=ReplaySection)
    source: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data.pop('source')
        return data

    @property
    def base_dir(self) -> Optional[Path]:
        return Path(self.source).parent if self.source else None

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       scenario: Optional[str] = None) -> 'ScenarioConfig':
        """Apply command-line overrides on top of the file values."""
        changes = {}
        if seed is not None:
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("seed must be a 64-bit unsigned integer", '--seed', None)
            changes['seed'] = seed
        if scenario is not None:
            changes['scenario'] = scenario
        if output_dir is not None:
            changes['output_dir'] = output_dir
        return dataclasses.replace(self, **changes)


def _check_type(value: Any, tp: Any, key: str, location: Optional[str]) -> Any:
    origin = getattr(tp, '__origin__', None)
    args = getattr(tp, '__args__', ())

    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _check_type(value, inner, key, location)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError("expected a list", key, location)
        return [_check_type(v, args[0], f"{key}[{i}]", location) for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", key, location)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", key, location)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", key, location)
        if not np.isfinite(value):
            raise ConfigError("expected a finite number", key, location)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", key, location)
        return value
    return value


def _build_section(cls, data: Any, prefix: str, location: Optional[str]):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", prefix, location)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"unknown key (allowed: {', '.join(fields)})",
                              f"{prefix}.{key}" if prefix else key, location)

    kwargs = {}
    for name, f in fields.items():
        dotted = f"{prefix}.{name}" if prefix else name
        if name in data:
            kwargs[name] = _check_type(data[name], f.type, dotted, location)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError("missing required key", dotted, location)
    return cls(**kwargs)


def parse_config(data: Any, location: Optional[str] = None) -> ScenarioConfig:
    """Validate a decoded JSON document and build the ScenarioConfig."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", None, location)

    top = {'scenario', 'seed', 'output_dir', 'workers'}
    for key in data:
        if key not in top and key not in _SECTIONS:
            raise ConfigError("unknown key", key, location)
    if 'scenario' not in data:
        raise ConfigError("missing required key", 'scenario', location)

    scenario = _check_type(data['scenario'], str, 'scenario', location)
    if scenario not in C.SCENARIO_VALUES:
        raise ConfigError(f"unknown scenario '{scenario}' (expected one of "
                          f"{', '.join(C.SCENARIO_VALUES)})", 'scenario', location)
    seed = _check_type(data.get('seed', 0), int, 'seed', location)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer", 'seed', location)
    workers = _check_type(data.get('workers', 1), int, 'workers', location)
    if workers < 1:
        raise ConfigError("workers must be at least 1", 'workers', location)
    output_dir = _check_type(data.get('output_dir'), Optional[str], 'output_dir', location)

    sections = {}
    for name, cls in _SECTIONS.items():
        section = _build_section(cls, data.get(name, {}), name, location)
        sections[name] = section

    config = ScenarioConfig(scenario=scenario, seed=seed, output_dir=output_dir,
                            workers=workers, source=location, **sections)
    validate_domain(config)
    return config


def validate_domain(config: ScenarioConfig):
    """Build each domain object once so domain-level errors surface as ConfigError."""
    location = config.source
    checks = [
        ('nv', lambda: config.nv.build()),
        ('bias', lambda: config.bias.build()),
        ('drive', lambda: config.drive.build(default_fc=C.CARRIER_HZ)),
        ('detector', lambda: config.detector.build()),
        ('noise', lambda: config.noise.build(config.seed)),
        ('lockin', lambda: config.lockin.build(config.drive.fm)),
        ('field', lambda: config.field.build(config.bias.build(), config.base_dir)),
    ]
    for section, check in checks:
        try:
            check()
        except ConfigError:
            raise
        except (ValueError, OSError) as e:
            raise ConfigError(f"invalid section: {e}", section, location)

    if config.analysis.edf_mode not in C.EDF_MODE_VALUES:
        raise ConfigError(f"expected one of {C.EDF_MODE_VALUES}", 'analysis.edf_mode', location)
    if len(config.calibration.currents) < 1:
        raise ConfigError("at least one current is required", 'calibration.currents', location)
    if config.dynrange.open_fdev is not None and not config.dynrange.open_fdev >= 0:
        raise ConfigError("must be non-negative", 'dynrange.open_fdev', location)
    if config.replay.smooth_sigma < 0:
        raise ConfigError("must be non-negative", 'replay.smooth_sigma', location)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Read and validate a scenario file.

    Raises:
        ConfigError: unreadable file, malformed JSON or invalid content
    """
    path = Path(path)
    location = str(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", None, location)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON: {e.msg}", f"line {e.lineno} column {e.colno}",
                          location)
    config = parse_config(data, location)
    logger.info(f"Loaded {config.scenario} scenario from {path}")
    return config
