"""
Field profile plug-ins.
New profile kinds register in PROFILES and are built from config dicts by build_profile.
"""

from typing import Dict

from .base import FieldProfile
from .waveforms import ConstantProfile, SquareProfile, RampProfile
from .replay import (
    ReplayProfile,
    elevator_profile,
    load_replay_csv,
    save_replay_csv,
    staircase_profile,
)

PROFILES: Dict[str, type] = {
    'constant': ConstantProfile,
    'square': SquareProfile,
    'ramp': RampProfile,
    'replay': ReplayProfile,
}


def build_profile(kind: str, **kwargs) -> FieldProfile:
    if kind not in PROFILES:
        raise ValueError(f"Unknown field profile '{kind}'. Available: {', '.join(PROFILES)}")
    return PROFILES[kind](**kwargs)


__all__ = [
    'FieldProfile',
    'ConstantProfile',
    'SquareProfile',
    'RampProfile',
    'ReplayProfile',
    'PROFILES',
    'build_profile',
    'elevator_profile',
    'load_replay_csv',
    'save_replay_csv',
    'staircase_profile',
]
