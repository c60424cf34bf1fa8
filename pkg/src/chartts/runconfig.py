"""Layered run configuration: defaults, then a key=value file, then command-line overrides.

Keys are dotted: ``<section>.<field>`` where section is one of dsp, model,
train, synth, toyset. ``model.preset`` picks the base architecture sizes
(base, tiny or micro) before any other model key is applied.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .corpus import ToysetSpec
from .dsp import SpectralConfig
from .model import ModelConfig
from .synthesizer import SynthConfig
from .trainer import TrainConfig

SECTIONS = {
    "dsp": SpectralConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
    "toyset": ToysetSpec,
}
PRESETS = ("base", "tiny", "micro")


class ConfigError(ValueError):
    pass


def _field_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in dataclasses.fields(cls)}


def _coerce(key: str, raw: str, default: Any):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            return None if raw.lower() in ("none", "") else float(raw)
        if isinstance(default, tuple):
            items = [s for s in raw.replace(" ", "").split(",") if s]
            if default and isinstance(default[0], tuple):
                # milestone pairs as step:value
                return tuple((int(a), float(b)) for a, b in (s.split(":") for s in items))
            return tuple(int(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{a}:{b!r}" for a, b in value)
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    preset: str = "base"
    overrides: dict = field(default_factory=dict)  # (section, field) -> value

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.strip().partition(".")
        if key.strip() == "model.preset":
            if raw.strip() not in PRESETS:
                raise ConfigError(f"unknown preset {raw!r}; expected one of {PRESETS}")
            self.preset = raw.strip()
            return
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        defaults = _field_defaults(SECTIONS[section])
        if name not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        self.overrides[(section, name)] = _coerce(key, raw, defaults[name])

    def has(self, key: str) -> bool:
        section, _, name = key.partition(".")
        return (section, name) in self.overrides

    def apply_pairs(self, pairs: Iterable[str]) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"expected key=value, got {pair!r}")
            k, _, v = pair.partition("=")
            self.set(k, v)

    def load_file(self, path) -> None:
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, _, v = line.partition("=")
            try:
                self.set(k, v)
            except ConfigError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None

    def _kwargs(self, section: str) -> dict:
        return {n: v for (s, n), v in self.overrides.items() if s == section}

    def build(self, section: str):
        try:
            if section == "model":
                factory = {"base": ModelConfig, "tiny": ModelConfig.tiny, "micro": ModelConfig.micro}
                return factory[self.preset](**self._kwargs("model"))
            return SECTIONS[section](**self._kwargs(section))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {section} configuration: {e}") from None

    @property
    def dsp(self) -> SpectralConfig:
        return self.build("dsp")

    @property
    def model(self) -> ModelConfig:
        return self.build("model")

    @property
    def train(self) -> TrainConfig:
        return self.build("train")

    @property
    def synth(self) -> SynthConfig:
        return self.build("synth")

    @property
    def toyset(self) -> ToysetSpec:
        return self.build("toyset")

    def effective_lines(self) -> list:
        """Every key with its effective value, in a form ``load_file`` accepts."""
        lines = [f"model.preset={self.preset}"]
        for section in SECTIONS:
            obj = self.build(section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name}={_render(getattr(obj, f.name))}")
        return lines

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self.effective_lines()) + "\n", encoding="utf-8")


def make_run_config(config_file: Optional[str], pairs: Iterable[str], preset: Optional[str] = None) -> RunConfig:
    rc = RunConfig()
    if preset is not None:
        rc.preset = preset
    if config_file:
        rc.load_file(config_file)
    rc.apply_pairs(pairs or ())
    return rc
