"""Session configuration: dataclass sections loaded from JSON.

Every section may be omitted; missing keys take the defaults below.
Unknown keys and out-of-range values raise :class:`ConfigError` naming
the offending field.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from . import optimizer
from .analysis import ClassificationParams
from .transfer import DeviceSpec, GainTable

PRESETS_DIR = Path(__file__).with_name("presets")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    # 400 CPI at 125 Hz: one count per event is 0.0079375 m/s
    res_in: float = 400 / 25.4
    freq_in: float = 125.0
    res_out: float = 1280 / 358.0
    screen_w: int = 1280
    screen_h: int = 800
    range_mm: float = 60.0  # longest single stroke the device allows
    one_euro: bool = False
    one_euro_min_cutoff: float = 1e-5
    one_euro_beta: float = 0.05
    one_euro_d_cutoff: float = 1.0

    def spec(self) -> DeviceSpec:
        return DeviceSpec(self.res_in, self.freq_in, self.res_out, self.screen_w, self.screen_h)


@dataclass(frozen=True)
class GainTableConfig:
    bin_width: float = 0.0079
    n_bins: int = 64
    initial_gain: float = 1.0
    gain_floor: float = 0.01
    grow: bool = True
    interpolation: str = "linear"

    def table(self) -> GainTable:
        return GainTable.constant(
            self.bin_width,
            self.n_bins,
            self.initial_gain,
            gain_floor=self.gain_floor,
            interpolation=self.interpolation,
        )


@dataclass(frozen=True)
class SegmentationConfig:
    sigma: float = 3.0
    persistence: float = 0.2


@dataclass(frozen=True)
class ClassificationConfig:
    max_angle_deg: float = 45.0
    overshoot_ratio: float = 0.5
    interrupted_ratio: float = 0.5
    clutch_ms: float = 130.0
    # interrupted non-ballistic submovements aim at the target centre by
    # default; set true to use p * D_target for every interrupted one
    interrupted_uses_aim_point: bool = False

    def params(self) -> ClassificationParams:
        return ClassificationParams(
            self.max_angle_deg, self.overshoot_ratio, self.interrupted_ratio, self.clutch_ms
        )


@dataclass(frozen=True)
class KalmanConfig:
    q: float = 0.2
    r: float = 40.0
    p0: float = 1.0
    cov0: float = 1.0
    measurement: str = "covered"


@dataclass(frozen=True)
class OptimizerConfig:
    c: float = optimizer.DEFAULT_C
    unaimed_claims_bins: bool = False


@dataclass(frozen=True)
class UserConfig:
    p_user: float = 0.94
    noise_k: float = 0.1
    alpha: float = 0.3
    events_per_submovement: int = 25
    peak_speed_scale: float = 1.875
    direction_noise_deg: float = 1.0
    reference_amplitude_mm: float = 10.0
    duration_exponent: float = 0.35
    initial_gain_belief: float = 1.0
    clutch: bool = False
    clutch_gap_ms: float = 200.0
    max_submovements: int = 20


@dataclass(frozen=True)
class SessionConfig:
    trials: int = 800
    block_size: int = 80
    snapshot_every: int = 0
    id_min: float = 2.0
    id_max: float = 5.5
    width_min_mm: float = 2.0
    width_max_mm: float = 11.5
    id_tolerance: float = 0.1
    max_draws: int = 100_000


@dataclass(frozen=True)
class Config:
    device: DeviceConfig = field(default_factory=DeviceConfig)
    gain_table: GainTableConfig = field(default_factory=GainTableConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    classification: ClassificationConfig = field(default_factory=ClassificationConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    user: UserConfig = field(default_factory=UserConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def with_overrides(self, overrides: dict) -> "Config":
        merged = self.to_dict()
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = {**merged[key], **value}
            else:
                merged[key] = value
        return from_dict(merged)


_SECTION_TYPES = {
    "device": DeviceConfig,
    "gain_table": GainTableConfig,
    "segmentation": SegmentationConfig,
    "classification": ClassificationConfig,
    "kalman": KalmanConfig,
    "optimizer": OptimizerConfig,
    "user": UserConfig,
    "session": SessionConfig,
}

# (section, field) -> check, message
_POSITIVE = "must be > 0"
_NONNEG = "must be >= 0"
_RULES: dict[tuple[str, str], tuple[Any, str]] = {
    ("device", "res_in"): (lambda v: v > 0, _POSITIVE),
    ("device", "freq_in"): (lambda v: v > 0, _POSITIVE),
    ("device", "res_out"): (lambda v: v > 0, _POSITIVE),
    ("device", "screen_w"): (lambda v: v > 0, _POSITIVE),
    ("device", "screen_h"): (lambda v: v > 0, _POSITIVE),
    ("device", "range_mm"): (lambda v: v > 0, _POSITIVE),
    ("device", "one_euro_min_cutoff"): (lambda v: v > 0, _POSITIVE),
    ("device", "one_euro_beta"): (lambda v: v >= 0, _NONNEG),
    ("device", "one_euro_d_cutoff"): (lambda v: v > 0, _POSITIVE),
    ("gain_table", "bin_width"): (lambda v: v > 0, _POSITIVE),
    ("gain_table", "n_bins"): (lambda v: v >= 1, "must be >= 1"),
    ("gain_table", "gain_floor"): (lambda v: v >= 0, _NONNEG),
    ("gain_table", "interpolation"): (lambda v: v in ("linear", "step"), "must be 'linear' or 'step'"),
    ("segmentation", "sigma"): (lambda v: v > 0, _POSITIVE),
    ("segmentation", "persistence"): (lambda v: v >= 0, _NONNEG),
    ("classification", "max_angle_deg"): (lambda v: 0 < v <= 180, "must be in (0, 180]"),
    ("classification", "overshoot_ratio"): (lambda v: v >= 0, _NONNEG),
    ("classification", "interrupted_ratio"): (lambda v: v >= 0, _NONNEG),
    ("classification", "clutch_ms"): (lambda v: v > 0, _POSITIVE),
    ("kalman", "q"): (lambda v: v > 0, _POSITIVE),
    ("kalman", "r"): (lambda v: v > 0, _POSITIVE),
    ("kalman", "cov0"): (lambda v: v > 0, _POSITIVE),
    ("kalman", "measurement"): (lambda v: v in ("covered", "remaining"), "must be 'covered' or 'remaining'"),
    ("optimizer", "c"): (lambda v: v >= 0, _NONNEG),
    ("user", "p_user"): (lambda v: 0 < v <= 1, "must be in (0, 1]"),
    ("user", "noise_k"): (lambda v: v >= 0, _NONNEG),
    ("user", "alpha"): (lambda v: 0 < v <= 1, "must be in (0, 1]"),
    ("user", "events_per_submovement"): (lambda v: v >= 3, "must be >= 3"),
    ("user", "peak_speed_scale"): (lambda v: v > 1, "must be > 1"),
    ("user", "direction_noise_deg"): (lambda v: v >= 0, _NONNEG),
    ("user", "reference_amplitude_mm"): (lambda v: v > 0, _POSITIVE),
    ("user", "duration_exponent"): (lambda v: 0 <= v < 1, "must be in [0, 1)"),
    ("user", "initial_gain_belief"): (lambda v: v > 0, _POSITIVE),
    ("user", "clutch_gap_ms"): (lambda v: v > 0, _POSITIVE),
    ("user", "max_submovements"): (lambda v: v >= 1, "must be >= 1"),
    ("session", "trials"): (lambda v: v >= 0, _NONNEG),
    ("session", "block_size"): (lambda v: v >= 1, "must be >= 1"),
    ("session", "snapshot_every"): (lambda v: v >= 0, _NONNEG),
    ("session", "id_tolerance"): (lambda v: v > 0, _POSITIVE),
    ("session", "max_draws"): (lambda v: v >= 1, "must be >= 1"),
    ("session", "width_min_mm"): (lambda v: v > 0, _POSITIVE),
}


def _coerce(section: str, name: str, value, default):
    where = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _section(name: str, data) -> Any:
    cls = _SECTION_TYPES[name]
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown field")
    values = {}
    for key, value in data.items():
        values[key] = _coerce(name, key, value, getattr(defaults, key))
        rule = _RULES.get((name, key))
        if rule and not rule[0](values[key]):
            raise ConfigError(f"{name}.{key}: {rule[1]} (got {value!r})")
    return replace(defaults, **values)


def from_dict(data) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(data) - set(_SECTION_TYPES) - {"seed"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown section")
    sections = {name: _section(name, data[name]) for name in _SECTION_TYPES if name in data}
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    cfg = Config(seed=seed, **sections)
    _check_cross_fields(cfg)
    return cfg


def _check_cross_fields(cfg: Config) -> None:
    s = cfg.session
    if not s.id_min < s.id_max:
        raise ConfigError("session.id_max: must exceed session.id_min")
    if not s.width_min_mm < s.width_max_mm:
        raise ConfigError("session.width_max_mm: must exceed session.width_min_mm")
    if cfg.gain_table.initial_gain < cfg.gain_table.gain_floor:
        raise ConfigError("gain_table.initial_gain: must be >= gain_table.gain_floor")


def loads(text: str) -> Config:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_dict(data)


def load(path) -> Config:
    """Load a config file. A bare preset name (``study1``, ``study2``,
    ``default``) is accepted when no such file exists."""
    path = Path(path)
    if not path.exists():
        preset_path = PRESETS_DIR / f"{path.stem}.json"
        if path.parent == Path(".") and preset_path.exists():
            path = preset_path
        else:
            raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text())


def preset(name: str) -> Config:
    path = PRESETS_DIR / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"unknown preset {name!r}")
    return loads(path.read_text())
