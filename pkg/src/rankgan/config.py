"""Experiment configuration: strict JSON loading and resolved defaults."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import KINDS, MASK_KINDS
from .losses import LossWeights
from .nn import ConfigError

EXPERIMENT_KINDS = ("pipeline", "fig2-scores", "completion", "metrics-only")
LOSS_KINDS = ("rankgan", "margin", "wgan", "lsgan", "gan")
ENCODER_MODES = ("sample-aware", "sample-agnostic")
SUBSEED_NAMES = ("data", "init", "train", "completion")


@dataclass
class TrainSchedule:
    critic_steps: int = 5
    max_stage_epochs: int = 200
    gap_window: int = 15
    # None: 2% of the first recorded gap of the stage
    gap_threshold: float | None = None

    def __post_init__(self):
        if self.critic_steps < 1 or self.max_stage_epochs < 0 or self.gap_window < 1:
            raise ConfigError("schedule values must be positive")
        if self.gap_threshold is not None and self.gap_threshold <= 0:
            raise ConfigError("gap_threshold must be positive")


@dataclass
class CompletionConfig:
    lam: float = 10.0
    iterations: int = 2000
    step_size: float = 0.05
    z_init: str = "encoder"
    mask: str = "center-large"
    n_images: int = 50
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("completion.iterations must be >= 1")
        if self.lam < 0:
            raise ConfigError("completion.lam must be >= 0")
        if self.z_init not in ("encoder", "prior"):
            raise ConfigError(f"completion.z_init must be 'encoder' or 'prior', got {self.z_init!r}")
        if self.mask not in MASK_KINDS:
            raise ConfigError(f"unknown mask kind {self.mask!r}")


@dataclass
class Fig2Config:
    n_samples: int = 512
    steps: int = 1500
    lr: float = 1e-3
    batch_size: int = 64
    hidden: list = field(default_factory=lambda: [64, 64])
    # 1D critics cannot flip the sign of their slope through a strong
    # two-sided penalty (|slope| would have to pass 0); keep it mild here
    lambda_gp: float = 1.0
    grid_min: float = -5.0
    grid_max: float = 5.0
    grid_step: float = 0.05


@dataclass
class SubSeeds:
    data: int | None = None
    init: int | None = None
    train: int | None = None
    completion: int | None = None


@dataclass
class ExperimentConfig:
    kind: str = "pipeline"
    dataset: str = "ring8"
    n_samples: int = 2000
    seed: int = 0
    seeds: SubSeeds = field(default_factory=SubSeeds)
    output_dir: str = "runs/default"
    nstages: int = 3
    loss: str = "rankgan"
    encoder_mode: str = "sample-aware"
    stage1_adversarial: bool = True
    latent_dim: int | None = None
    hidden: list = field(default_factory=lambda: [64, 64])
    encoder_hidden: list = field(default_factory=lambda: [64])
    batch_size: int = 64
    vae_epochs: int = 20
    vae_kl_weight: float = 1.0
    d1_warm_epochs: int = 1
    lr_d: float = 5e-5
    lr_g: float = 5e-5
    lr_e: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    fig2: Fig2Config = field(default_factory=Fig2Config)
    n_proj: int = 256
    figures: bool = True
    record_wall_time: bool = False

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}")
        if self.dataset not in KINDS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {KINDS}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ConfigError(f"unknown encoder mode {self.encoder_mode!r}")
        if self.kind == "completion" and self.dataset != "toy-faces":
            raise ConfigError("completion experiments need dataset 'toy-faces'")
        if self.nstages < 1:
            raise ConfigError("nstages must be >= 1")
        if self.loss != "rankgan" and self.nstages > 1:
            raise ConfigError(f"loss {self.loss!r} trains a single stage; set nstages = 1")
        if self.vae_kl_weight < 0:
            raise ConfigError("vae_kl_weight must be >= 0")
        if self.batch_size < 1 or self.n_samples < 10:
            raise ConfigError("batch_size must be >= 1 and n_samples >= 10")
        if self.latent_dim is None:
            self.latent_dim = 8 if self.dataset == "toy-faces" else 2

    def subseed(self, name: str) -> int:
        """Named seed stream; derived from ``seed`` unless set explicitly."""
        explicit = getattr(self.seeds, name)
        if explicit is not None:
            return int(explicit)
        idx = SUBSEED_NAMES.index(name)
        return int(np.random.SeedSequence([self.seed, idx]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        where = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, where)
        else:
            kwargs[key] = _coerce(hint, value, where)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(hint, value, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if hint is list:
        if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
            raise ConfigError(f"{where}: expected a list of positive integers, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
