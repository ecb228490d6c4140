"""Plain-text experiment configs: one ``key = value`` per line, ``#`` comments.

Keys are either top-level (``data``, ``lookback``, ``horizons``, ``split``,
``output_dir``) or prefixed by a section: ``model.``, ``train.`` or
``synthetic.``.  Unknown keys are rejected with the offending file and line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticConfig
from .model import ModelConfig
from .train import TrainConfig

# lookback, horizon and channels come from the top level and the data
MODEL_DERIVED = ("lookback", "horizon", "channels")
SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synthetic": SyntheticConfig}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: str = ""  # CSV path; empty means generate from the synthetic section
    lookback: int = 96
    horizons: tuple[int, ...] = (96,)
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    output_dir: str = "runs/default"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)

    def model_config(self, horizon: int, channels: int) -> ModelConfig:
        return ModelConfig(lookback=self.lookback, horizon=horizon, channels=channels, **self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(**self.synthetic)

    def validate(self) -> None:
        if self.lookback < 1 or not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("lookback and every horizon must be positive")
        try:
            self.train_config()
            if not self.data:
                self.synthetic_config()
            for h in self.horizons:
                self.model_config(h, 1)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Copy with section entries replaced, e.g. ``model={"pe_mode": "rope"}``."""
        out = dataclasses.replace(self, model=dict(self.model), train=dict(self.train),
                                  synthetic=dict(self.synthetic))
        for key, value in sections.items():
            if key in SECTIONS:
                getattr(out, key).update(value)
            else:
                setattr(out, key, value)
        return out


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(text: str, default):
    """Parse ``text`` to the type of ``default`` (tuples are comma lists)."""
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple) or default is None:
        if text.lower() in ("", "none", "default"):
            return None
        items = [s.strip() for s in text.split(",") if s.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(s) for s in items)
    return text


def _default_of(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


TOP_LEVEL = {k: f for k, f in _fields(ExperimentConfig).items() if k not in SECTIONS}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in SECTIONS:
                    raise ConfigError(f"{where}: unknown section {section!r} in key {key!r}")
                known = _fields(SECTIONS[section])
                if name not in known or (section == "model" and name in MODEL_DERIVED):
                    raise ConfigError(f"{where}: unknown key {key!r}")
                default = _default_of(known[name])
                if section == "synthetic" and name == "phases":
                    default = (0.0,)
                getattr(cfg, section)[name] = _parse_value(value, default)
            else:
                if key not in TOP_LEVEL:
                    raise ConfigError(f"{where}: unknown key {key!r}")
                setattr(cfg, key, _parse_value(value, _default_of(TOP_LEVEL[key])))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def resolved_items(cfg: ExperimentConfig) -> list[tuple[str, object]]:
    """Every key with its effective value, defaults included, in a fixed order."""
    items = [(k, getattr(cfg, k)) for k in TOP_LEVEL]
    for section, cls in SECTIONS.items():
        if section == "synthetic" and cfg.data:
            continue
        given = getattr(cfg, section)
        for name, f in _fields(cls).items():
            if section == "model" and name in MODEL_DERIVED:
                continue
            items.append((f"{section}.{name}", given.get(name, _default_of(f))))
    return items


def format_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in resolved_items(cfg))


def write_resolved(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text("# resolved configuration (all defaults made explicit)\n" + format_config(cfg))
