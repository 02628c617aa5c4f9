"""Declarative run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .audio import AudioConfig
from .errorgen import ErrorGenConfig
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def config_seed(path) -> int | None:
    """The ``seed`` recorded in a config or lock file, if any."""
    seed = read_json(path).get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return seed


@dataclass(frozen=True)
class EvalConfig:
    onset_tol: float = 0.05
    empty_value: float = 1.0
    average: str = "micro"

    def __post_init__(self):
        if self.onset_tol <= 0:
            raise ValueError("onset_tol must be positive")
        if self.average != "micro":
            raise ValueError("only micro averaging is implemented")


# keys a lock file carries besides the sections; ignored when loading
LOCK_ONLY = {"seed", "run"}

SECTIONS = {"errorgen": ErrorGenConfig, "audio": AudioConfig, "model": ModelConfig,
            "train": TrainConfig, "eval": EvalConfig}


@dataclass(frozen=True)
class RunConfig:
    errorgen: ErrorGenConfig = field(default_factory=ErrorGenConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS) - LOCK_ONLY
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        kwargs = {}
        for name, klass in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = klass(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {name!r} section: {exc}") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def with_seed(self, seed: int) -> "RunConfig":
        """Propagate one run seed into every seeded section."""
        return RunConfig(dataclasses.replace(self.errorgen, seed=seed), self.audio,
                         dataclasses.replace(self.model, seed=seed),
                         dataclasses.replace(self.train, seed=seed), self.eval)

    def lock(self, out_dir, seed: int, **extra):
        """Write ``config.lock.json`` into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        doc = {"seed": seed, **self.to_dict()}
        if extra:
            doc["run"] = extra
        with open(os.path.join(out_dir, "config.lock.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
