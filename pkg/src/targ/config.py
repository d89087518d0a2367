"""Training/run configuration with the desk and paper presets."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .attention import ABLATIONS, VARIANTS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 64
    n_layers: int = 2
    n_heads: int = 4
    dec_layers: int = 2
    encoder: str = "transformer"  # or "bilstm"
    shared_encoder: bool = True
    max_len: int = 50
    max_turns: int = 15
    max_factoids: int = 64
    max_span: int = 5
    max_decode_len: int = 50
    dropout: float = 0.1
    ablation: str = "full"
    feature_interaction: str = "elementwise"
    strict_exp: bool = False
    lam: float = 0.5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 12
    seed: int = 7

    def validate(self) -> "TrainConfig":
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by n_heads {self.n_heads}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.feature_interaction not in VARIANTS:
            raise ConfigError(f"unknown feature_interaction {self.feature_interaction!r}")
        if self.encoder not in ("transformer", "bilstm"):
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError("dropout must be in [0, 1]")
        return self

    @property
    def encoder_kind(self) -> str:
        return "bilstm" if self.ablation == "bilstm_encoder" else self.encoder

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


PRESETS: dict[str, dict] = {
    "desk": {},
    "paper": {"hidden": 768, "n_layers": 6, "n_heads": 12, "dec_layers": 6,
              "learning_rate": 3e-5, "batch_size": 8, "dropout": 0.1, "lambda": 0.5},
}

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"lam"} | {"lambda"}
_PATH_KEYS = {"train_corpus", "dev_corpus", "out_dir"}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    preset: str = "desk"
    train_corpus: str | None = None
    dev_corpus: str | None = None
    out_dir: str | None = None

    @classmethod
    def from_dict(cls, obj: dict, env: dict | None = None) -> "RunConfig":
        unknown = set(obj) - _TRAIN_KEYS - _PATH_KEYS - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        preset = obj.get("preset", "desk")
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}")
        merged = {**PRESETS[preset], **{k: v for k, v in obj.items() if k in _TRAIN_KEYS}}
        env = os.environ if env is None else env
        if env.get("TARG_SEED"):
            try:
                merged["seed"] = int(env["TARG_SEED"])
            except ValueError:
                raise ConfigError(f"TARG_SEED must be an integer, got {env['TARG_SEED']!r}") from None
        train = train_config(merged)
        return cls(train, preset, obj.get("train_corpus"), obj.get("dev_corpus"), obj.get("out_dir"))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON: {e}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)


def train_config(d: dict) -> TrainConfig:
    d = dict(d)
    unknown = set(d) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    try:
        return TrainConfig(**d).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from None


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw).validate()
