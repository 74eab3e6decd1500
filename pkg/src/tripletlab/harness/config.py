"""Experiment configuration: defaults, validation, and the flat
key=value config-file format (CLI flags override file values)."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from ..defenses import DEFENSE_KINDS, DefenseSpec
from ..hm import parse_destination
from ..pgd import PerturbationBudget
from ..samplers import STRATEGIES


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    classes_per_batch: int = 8
    samples_per_class: int = 4
    lr: float = 1e-3
    gamma: float = 0.2
    lam: float = 0.5
    eps: float = 8.0 / 255.0
    alpha: float = 1.0 / 255.0
    pgd_steps: int = 8
    eval_pgd_steps: int = 32
    defense: str = "none"
    source: str = "random"
    destination: str = "lga"
    seed: int = 0
    u: float | None = None
    xi: float = 0.1
    hidden: tuple = (64, 64)
    embed_dim: int = 32

    def validate(self) -> "TrainConfig":
        try:
            if self.epochs < 0:
                raise ValueError(f"epochs must be >= 0, got {self.epochs}")
            if self.classes_per_batch < 2 or self.samples_per_class < 2:
                raise ValueError("need >= 2 classes per batch and >= 2 samples per class")
            if self.lr <= 0:
                raise ValueError(f"lr must be > 0, got {self.lr}")
            if self.gamma < 0:
                raise ValueError(f"gamma must be >= 0, got {self.gamma}")
            if self.lam < 0:
                raise ValueError(f"lambda must be >= 0, got {self.lam}")
            if self.u is not None and self.u <= 0:
                raise ValueError(f"u must be > 0, got {self.u}")
            if self.xi < 0:
                raise ValueError(f"xi must be >= 0, got {self.xi}")
            if self.embed_dim < 2:
                raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
            if self.defense not in DEFENSE_KINDS:
                raise ValueError(f"unknown defense {self.defense!r}, pick from {DEFENSE_KINDS}")
            if self.source not in STRATEGIES:
                raise ValueError(f"unknown source sampler {self.source!r}, pick from {STRATEGIES}")
            self.budget()
            self.eval_budget()
            if self.defense in ("hm", "hm+ics"):
                parse_destination(self.destination, self.gamma, self.xi)
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(str(err)) from err
        return self

    @property
    def resolved_u(self) -> float:
        return self.gamma if self.u is None else self.u

    def budget(self) -> PerturbationBudget:
        try:
            return PerturbationBudget(self.eps, self.alpha, self.pgd_steps)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def eval_budget(self) -> PerturbationBudget:
        try:
            return PerturbationBudget(self.eps, self.alpha, self.eval_pgd_steps)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def defense_spec(self) -> DefenseSpec:
        destination = None
        if self.defense in ("hm", "hm+ics"):
            destination = parse_destination(self.destination, self.gamma, self.xi)
        try:
            return DefenseSpec(kind=self.defense, source=self.source,
                               destination=destination, lam=self.lam,
                               gamma=self.gamma, budget=self.budget())
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def label(self) -> str:
        """Human-readable run label used in tables and curve legends."""
        if self.defense in ("hm", "hm+ics"):
            tail = "+ics" if self.defense == "hm+ics" else ""
            return f"hm[{self.source},{self.destination}]{tail}"
        if self.defense == "none":
            return f"none[{self.source}]"
        return f"{self.defense}[{self.source}]"

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            key = "lam" if key == "lambda" else key
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, value)
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        data = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                data[key] = value
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "TrainConfig":
        updates = {}
        for key, value in overrides.items():
            if value is None:
                continue
            key = "lam" if key == "lambda" else key
            updates[key] = _coerce(key, value)
        return replace(self, **updates).validate()


_INT_KEYS = {"epochs", "classes_per_batch", "samples_per_class", "pgd_steps",
             "eval_pgd_steps", "seed", "embed_dim"}
_FLOAT_KEYS = {"lr", "gamma", "lam", "eps", "alpha", "xi"}
_STR_KEYS = {"defense", "source", "destination"}


def _coerce(key: str, value):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "u":
            if value in (None, "", "none", "null"):
                return None
            return float(value)
        if key == "hidden":
            if isinstance(value, (list, tuple)):
                return tuple(int(v) for v in value)
            text = value.strip()
            return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
        if key in _STR_KEYS:
            return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from err
    raise ConfigError(f"unknown config key {key!r}")
