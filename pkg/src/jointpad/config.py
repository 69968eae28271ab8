"""Run configuration: one INI file with a section per stage, plus stage hashes.

Every artifact embeds the hash of the configuration sections that produced
it.  A downstream command recomputes that hash from its own configuration and
refuses inputs that disagree (unless forced).
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

from .core import REFERENCE_FRACTIONS
from .entropy import CRITERIA, EntropyConfig
from .lstm import ModelConfig
from .pipeline import PrepConfig, sensor_subset
from .smooth import KalmanConfig
from .transfer import TransferConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimSection:
    d_eta: float = 4.0
    d_beta: float = 45.0
    templates: tuple[str, ...] = ("bend",)
    users: int = 1
    duration: float = 16.0
    rate: float = 50.0
    # 0 keeps the reference profile for u0; otherwise all users are randomised from it
    profile_seed: int = 0
    noise_scale: float | None = None
    chaos_scale: float | None = None


@dataclass(frozen=True)
class PrepSection:
    z: float = 3.0
    criterion: str = "fuzzy"
    descending: bool = False
    sensors: int = 6
    window: int = 30
    stride: int = 2


@dataclass(frozen=True)
class SplitSection:
    train: float = REFERENCE_FRACTIONS[0]
    validate: float = REFERENCE_FRACTIONS[1]
    test: float = REFERENCE_FRACTIONS[2]

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.validate, self.test)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    sim: SimSection = field(default_factory=SimSection)
    prep: PrepSection = field(default_factory=PrepSection)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    smooth: KalmanConfig = field(default_factory=KalmanConfig)

    @property
    def seed(self) -> int:
        return self.run.seed

    def prep_config(self) -> PrepConfig:
        p = self.prep
        if p.criterion not in CRITERIA:
            raise ConfigError(f"unknown ranking criterion {p.criterion!r}")
        channels = None if p.sensors == 6 else sensor_subset(p.sensors)
        return PrepConfig(p.z, p.criterion, p.descending, channels, self.entropy, p.window, p.stride)

    def model_config(self) -> ModelConfig:
        n = self.prep.sensors
        return replace(self.model, channels=n, window=self.prep.window, seed=self.seed)

    def transfer_config(self) -> TransferConfig:
        return replace(self.transfer, seed=self.seed)

    def as_dict(self) -> dict[str, dict[str, Any]]:
        out = {}
        for f in fields(self):
            sec = getattr(self, f.name)
            out[f.name] = {k.name: getattr(sec, k.name) for k in fields(sec) if k.init}
        return out

    def stage_hash(self, stage: str) -> str:
        sections = STAGE_SECTIONS[stage]
        d = self.as_dict()
        # what a checkpoint needs to be applied: preprocessing plus architecture, not training knobs
        d["arch"] = {"layers": self.model.layers, "hidden": self.model.hidden}
        payload = json.dumps({s: d[s] for s in sections}, sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


STAGE_SECTIONS: dict[str, tuple[str, ...]] = {
    "sim": ("run", "sim"),
    "rank": ("run", "sim", "prep", "entropy"),
    "train": ("run", "sim", "prep", "entropy", "split", "model"),
    "transfer": ("run", "sim", "prep", "entropy", "split", "model", "transfer"),
    "apply": ("prep", "entropy", "arch"),
    "predict": ("prep", "entropy", "arch", "smooth"),
    "evaluate": ("prep", "entropy", "arch", "smooth"),
}

_SECTION_TYPES = {f.name: f.default_factory for f in fields(RunConfig)}  # type: ignore[misc]


def _parse_value(raw: str, current: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or current is None:
            if current is None and raw.lower() in ("", "none"):
                return None
            return float(Fraction(raw))
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.replace(",", " ").split() if s.strip()]
            if current and isinstance(current[0], (int, float)) and not isinstance(current[0], bool):
                return tuple(float(Fraction(s)) for s in items)
            return tuple(items)
        return raw
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse {key}={raw!r}") from None


def update_section(section: Any, values: dict[str, Any], name: str) -> Any:
    known = {f.name: f for f in fields(section) if f.init}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        cur = getattr(section, key)
        changes[key] = _parse_value(raw, cur, f"{name}.{key}") if isinstance(raw, str) else raw
    try:
        return replace(section, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def load_config(path: Path | str | None = None, overrides: dict[str, dict[str, Any]] | None = None) -> RunConfig:
    """Read an INI file (optional) and apply ``overrides`` (section -> key -> value); overrides win."""
    cfg = RunConfig()
    sections: dict[str, dict[str, Any]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # type: ignore[assignment]
        try:
            read = parser.read(Path(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for name in parser.sections():
            if name not in _SECTION_TYPES:
                raise ConfigError(f"unknown section [{name}]")
            sections[name] = dict(parser.items(name))
    for name, vals in (overrides or {}).items():
        sections.setdefault(name, {}).update({k: v for k, v in vals.items() if v is not None})
    for name, vals in sections.items():
        cfg = replace(cfg, **{name: update_section(getattr(cfg, name), vals, name)})
    fr = cfg.split.fractions
    if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError("split fractions must be positive and sum to 1")
    if not 1 <= cfg.prep.sensors <= 6:
        raise ConfigError("prep.sensors must lie in [1, 6]")
    cfg.prep_config()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name, vals in cfg.as_dict().items():
        lines.append(f"[{name}]")
        for k, v in vals.items():
            if isinstance(v, tuple):
                v = ", ".join(map(str, v))
            lines.append(f"{k} = {'none' if v is None else v}")
        lines.append("")
    return "\n".join(lines)
