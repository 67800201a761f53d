"""Model and training configuration, presets, and TOML loading."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DIV2K_RGB_MEAN = (0.4488, 0.4371, 0.4040)


class ConfigError(ValueError):
    pass


@dataclass
class EncoderConfig:
    channels: int = 64
    n_resblocks: int = 4
    kernel_size: int = 3
    res_scale: float = 1.0
    rgb_mean: tuple[float, float, float] = DIV2K_RGB_MEAN
    padding: str = "zeros"

    def validate(self) -> None:
        if self.channels < 1:
            raise ConfigError("encoder.channels must be >= 1")
        if self.n_resblocks < 1:
            raise ConfigError("encoder.n_resblocks must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError("encoder.kernel_size must be odd")
        if len(self.rgb_mean) != 3:
            raise ConfigError("encoder.rgb_mean needs three values")
        if self.padding not in ("zeros", "replicate"):
            raise ConfigError(f"encoder.padding must be zeros|replicate, got {self.padding!r}")


@dataclass
class LitConfig:
    heads: int = 8
    freq_bands: int = 10
    grid: tuple[int, int] = (7, 7)
    decoder_depth: int = 5
    decoder_hidden: int = 256
    use_cell: bool = True
    use_freq_bias: bool = True
    use_attention: bool = True
    local_ensemble: bool = False
    query_chunk: int = 4096

    def validate(self, channels: int) -> None:
        if channels % self.heads:
            raise ConfigError(f"channels {channels} not divisible by {self.heads} heads")
        if self.freq_bands < 1:
            raise ConfigError("lit.freq_bands must be >= 1")
        gh, gw = self.grid
        if gh < 1 or gw < 1 or gh % 2 == 0 or gw % 2 == 0:
            raise ConfigError(f"lit.grid must be odd, got {tuple(self.grid)}")
        if self.decoder_depth < 1:
            raise ConfigError("lit.decoder_depth must be >= 1")
        if self.query_chunk < 1:
            raise ConfigError("lit.query_chunk must be >= 1")

    @property
    def effective_grid(self) -> tuple[int, int]:
        # Without attention each query reads only its nearest LR feature.
        return (1, 1) if not self.use_attention else (int(self.grid[0]), int(self.grid[1]))


@dataclass
class CascadeConfig:
    n_branches: int = 1
    branch_scales: tuple[float, ...] = (1.0,)
    discount: float = 0.75

    def validate(self) -> None:
        if self.n_branches < 1:
            raise ConfigError("cascade.n_branches must be >= 1")
        if len(self.branch_scales) != self.n_branches:
            raise ConfigError(
                f"cascade.branch_scales has {len(self.branch_scales)} entries for "
                f"{self.n_branches} branches"
            )
        if self.branch_scales[0] != 1.0:
            raise ConfigError("cascade.branch_scales must start with 1")
        if any(s < 1.0 for s in self.branch_scales):
            raise ConfigError("cascade.branch_scales must all be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("cascade.discount must lie in (0, 1]")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lit: LitConfig = field(default_factory=LitConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)

    def validate(self) -> "ModelConfig":
        self.encoder.validate()
        self.lit.validate(self.encoder.channels)
        self.cascade.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return cls(
            encoder=_build(EncoderConfig, d.get("encoder", {}), "model.encoder"),
            lit=_build(LitConfig, d.get("lit", {}), "model.lit"),
            cascade=_build(CascadeConfig, d.get("cascade", {}), "model.cascade"),
        ).validate()


STRATEGIES = ("baseline", "wide", "alternating", "cumulative")


@dataclass
class TrainConfig:
    strategy: str = "cumulative"
    batch_size: int = 32
    lr_patch: int = 48
    pixels_per_patch: int = 48 * 48
    lr: float = 1e-4
    gamma: float = 0.5
    stage1_epochs: int = 1000
    stage1_milestones: tuple[int, ...] = (200, 400, 600, 800)
    stage1_distribution: str = "low"
    finetune_epochs_per_branch: int = 500
    finetune_milestone_step: int = 100
    branch_sampling: str = "cascade"
    epoch_divisor: int = 1
    repeat: int = 1
    augment: bool = True
    seed: int = 0
    checkpoint_every: int = 0
    max_iterations: int | None = None

    def validate(self) -> "TrainConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"train.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.epoch_divisor < 1:
            raise ConfigError("train.epoch_divisor must be >= 1")
        if self.branch_sampling not in ("cascade", "alternating"):
            raise ConfigError("train.branch_sampling must be cascade|alternating")
        if self.stage1_distribution not in ("low", "high"):
            raise ConfigError("train.stage1_distribution must be low|high")
        ms = list(self.stage1_milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"train.stage1_milestones must be strictly increasing, got {ms}")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    out: str = "runs/clit"


def _build(cls, values: dict[str, Any], where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    kwargs = {}
    for k, v in values.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


_PRESETS: dict[str, dict[str, Any]] = {
    "paper-lit": {
        "model": {
            "encoder": {"n_resblocks": 16},
            "cascade": {"n_branches": 1, "branch_scales": [1.0]},
        },
        "train": {"strategy": "baseline"},
    },
    "paper-clit-n2": {
        "model": {
            "encoder": {"n_resblocks": 16},
            "cascade": {"n_branches": 2, "branch_scales": [1.0, 2.0]},
        },
        "train": {"strategy": "cumulative"},
    },
    "desk": {
        "model": {
            "encoder": {"n_resblocks": 4},
            "cascade": {"n_branches": 1, "branch_scales": [1.0]},
        },
        "train": {"strategy": "cumulative", "epoch_divisor": 100, "batch_size": 4},
    },
}


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def run_config_from_dict(d: dict[str, Any]) -> RunConfig:
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is not None:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {preset_names()}")
        d = _merge(_PRESETS[preset], d)
    unknown = set(d) - {"model", "train", "data", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    model = ModelConfig.from_dict(d.get("model", {}))
    train = _build(TrainConfig, d.get("train", {}), "train").validate()
    if train.strategy != "cumulative" and model.cascade.n_branches > 1:
        raise ConfigError(
            f"strategy {train.strategy!r} trains a single LIT; use 'cumulative' for "
            f"{model.cascade.n_branches} branches"
        )
    return RunConfig(model=model, train=train, data=d.get("data"), out=d.get("out", "runs/clit"))


def preset(name: str) -> RunConfig:
    return run_config_from_dict({"preset": name})


def load_config(path: str | Path) -> RunConfig:
    with open(path, "rb") as f:
        try:
            d = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    return run_config_from_dict(d)
