"""Run configuration shared by the pipeline stages and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .nn import ACTIVATIONS

# name -> what it switches off (ablation arm label in parentheses)
ABLATIONS = {
    "no_binarization": "feed train-fitted [0,1] min-max scaled features instead of median bits (w/o binarization)",
    "no_ps": "zero every path-signature term, keeping the vector length (w/o PS)",
    "no_ps_shrink": "drop every path-signature term from the vector and shrink the input layer (w/o PS, retrained shape)",
    "no_ae": "skip the compressor; the similarity layer reads the preprocessed features directly (w/o AE)",
    "no_weight": "vote with uniform weights (w/o weight)",
    "comp_weight": "voting weights from cosine similarity of compressed codes (Comp_weight)",
    "no_gender": "zero the gender one-hot (w/o gender info)",
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    folds: int = 10
    cortical_level: int = 3
    volume_level: int = 1
    hidden_dim: int = 128
    code_dim: int = 16
    sim_dim: int = 4
    hidden_activation: str = "sigmoid"
    code_activation: str = "sigmoid"
    ae_outer_epochs: int = 8
    ae_inner_epochs: int = 8
    siamese_epochs: int = 10
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 1.0
    gamma: float = 2.0
    patience: int = 5
    ablations: tuple[str, ...] = ()
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ablations", tuple(sorted(set(self.ablations))))
        self.validate()

    def validate(self) -> None:
        positive_ints = (
            "folds", "cortical_level", "volume_level", "hidden_dim", "code_dim", "sim_dim",
            "ae_outer_epochs", "ae_inner_epochs", "siamese_epochs", "batch_size", "patience", "jobs",
        )
        for name in positive_ints:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        for name in ("learning_rate", "alpha", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        for name in ("hidden_activation", "code_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ConfigError(f"{name} must be one of {', '.join(ACTIVATIONS)}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablations: {', '.join(sorted(unknown))}")
        if {"no_weight", "comp_weight"} <= set(self.ablations):
            raise ConfigError("no_weight and comp_weight select conflicting voting weights")
        if {"no_ae", "comp_weight"} <= set(self.ablations):
            raise ConfigError("comp_weight needs the compressor, which no_ae removes")
        if {"no_ps", "no_ps_shrink"} <= set(self.ablations):
            raise ConfigError("choose one of no_ps and no_ps_shrink")

    def has(self, ablation: str) -> bool:
        return ablation in self.ablations

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ablations"] = list(self.ablations)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "ablations" in data:
            abl = data["ablations"]
            data["ablations"] = tuple([abl] if isinstance(abl, str) else abl)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **overrides)


def load_config_file(path: str | Path) -> dict:
    """Read a flat JSON object of RunConfig keys."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError("config file must be a flat JSON object")
    return data
