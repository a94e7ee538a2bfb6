"""Run configuration: one JSON document, strict about unknown keys."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .deform import FitConfig
from .exceptions import ConfigError
from .losses import LossWeights

DEFORMERS = ("direct", "gnn")


def _strict(cls, section, d):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass
class InterpConfig:
    cutoff: float | None = None
    k: int = 8
    power: float = 2.0

    def __post_init__(self):
        if self.cutoff is not None and not self.cutoff >= 0:
            raise ConfigError("interp.cutoff must be >= 0 or null")
        if self.k < 1:
            raise ConfigError("interp.k must be >= 1")


@dataclass
class GnnConfig:
    alpha: list = field(default_factory=lambda: [-2.0, -1.0, 0.0, 1.0, 2.0])
    n_layers: int = 3
    width: int = 32
    steps: int = 500
    learning_rate: float = 1e-3

    def __post_init__(self):
        if not self.alpha:
            raise ConfigError("gnn.alpha must be non-empty")
        if self.n_layers < 0 or self.width < 1 or self.steps < 1 or not self.learning_rate > 0:
            raise ConfigError("gnn: n_layers >= 0, width >= 1, steps >= 1 and learning_rate > 0 required")


@dataclass
class ExtractConfig:
    smooth_iters: int = 10
    smooth_factor: float = 0.2


@dataclass
class EvalConfig:
    n_pairs: int = 20


@dataclass
class PathsConfig:
    dataset: str | None = None
    results: str | None = None


# weights and seed live in their own sections
_FIT_FIELDS = tuple(f.name for f in fields(FitConfig) if f.name not in ("weights", "seed"))


@dataclass
class RunConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    fit: dict = field(default_factory=lambda: {k: asdict(FitConfig())[k] for k in _FIT_FIELDS})
    interp: InterpConfig = field(default_factory=InterpConfig)
    deformer: str = "direct"
    gnn: GnnConfig = field(default_factory=GnnConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def __post_init__(self):
        if self.deformer not in DEFORMERS:
            raise ConfigError(f"deformer must be one of {DEFORMERS}, got {self.deformer!r}")
        # validates the fit section eagerly
        self.fit_config()

    def fit_config(self):
        unknown = set(self.fit) - set(_FIT_FIELDS)
        if unknown:
            raise ConfigError(f"unknown key(s) in fit: {sorted(unknown)}")
        d = dict(asdict(FitConfig()), **self.fit)
        d["weights"] = self.weights
        d["seed"] = self.seed
        return FitConfig(**d)

    def to_dict(self):
        return {
            "weights": self.weights.to_dict(),
            "fit": {k: self.fit_config().to_dict()[k] for k in _FIT_FIELDS},
            "interp": asdict(self.interp),
            "deformer": self.deformer,
            "gnn": asdict(self.gnn),
            "extract": asdict(self.extract),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
            "seed": self.seed,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
        kw = {}
        sections = {"weights": LossWeights, "interp": InterpConfig, "gnn": GnnConfig,
                    "extract": ExtractConfig, "eval": EvalConfig, "paths": PathsConfig}
        for name, sub in sections.items():
            if name in d:
                kw[name] = _strict(sub, name, d[name])
        if "fit" in d:
            if not isinstance(d["fit"], dict):
                raise ConfigError("section 'fit' must be an object")
            kw["fit"] = dict(d["fit"])
        for name in ("deformer", "seed"):
            if name in d:
                kw[name] = d[name]
        return cls(**kw)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{path}: file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        try:
            return cls.from_dict(doc)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None
