"""Speed-binned control-to-display gain adaptation.

Each pointing trial is split into submovements. Every speed bin a
submovement used then has its gain nudged in proportion to how far that
submovement fell short of (or past) where it was aimed.
"""
from .analysis import (
    AimPointFilter,
    SubmovementClass,
    SubmovementRecord,
    TargetSpec,
    classify,
)
from .config import Config, ConfigError, load, preset
from .optimizer import ChangeRate, UpdateBatch, apply_update, change_rate_from_budget, compute_deltas
from .pipeline import AutoGain, TrialResult
from .segmentation import SubmovementSpan, persistence_extrema, segment_submovements
from .simulation import UserModel, generate_task, run_session, run_trial
from .transfer import (
    CursorState,
    DeviceSpec,
    GainTable,
    InputEvent,
    OneEuroFilter,
    apply_input,
    interpolate_gain,
    read_gain_csv,
    write_gain_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AimPointFilter",
    "AutoGain",
    "ChangeRate",
    "Config",
    "ConfigError",
    "CursorState",
    "DeviceSpec",
    "GainTable",
    "InputEvent",
    "OneEuroFilter",
    "SubmovementClass",
    "SubmovementRecord",
    "SubmovementSpan",
    "TargetSpec",
    "TrialResult",
    "UpdateBatch",
    "UserModel",
    "apply_input",
    "apply_update",
    "change_rate_from_budget",
    "classify",
    "compute_deltas",
    "generate_task",
    "interpolate_gain",
    "load",
    "persistence_extrema",
    "preset",
    "read_gain_csv",
    "run_session",
    "run_trial",
    "segment_submovements",
    "write_gain_csv",
]
