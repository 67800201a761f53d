"""Training stages derived from a strategy, and dry-run scale schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..config import ConfigError, TrainConfig
from .data import ScaleDraw, sample_scale


@dataclass(frozen=True)
class Stage:
    name: str
    n_branches: int
    sampling: str  # baseline | wide | alternating | low | high | cascade
    epochs: int
    milestones: tuple[int, ...]
    adds_branch: bool = False


def _scaled(epochs: int, milestones, divisor: int) -> tuple[int, tuple[int, ...]]:
    e = max(1, round(epochs / divisor))
    ms: list[int] = []
    for m in milestones:
        v = max(1, round(m / divisor))
        if v < e and (not ms or v > ms[-1]):
            ms.append(v)
    return e, tuple(ms)


def build_stages(cfg: TrainConfig, n_branches: int) -> list[Stage]:
    """Expand a strategy into its stages, with epochs divided by ``epoch_divisor``."""
    cfg.validate()
    if n_branches < 1:
        raise ConfigError("n_branches must be >= 1")
    div = cfg.epoch_divisor
    e1, m1 = _scaled(cfg.stage1_epochs, cfg.stage1_milestones, div)
    if cfg.strategy != "cumulative":
        if n_branches != 1:
            raise ConfigError(f"strategy {cfg.strategy!r} trains a single LIT, got {n_branches} branches")
        return [Stage("train", 1, cfg.strategy, e1, m1)]
    first = "baseline" if cfg.stage1_distribution == "low" else "high"
    stages = [Stage("stage1", 1, first, e1, m1)]
    if n_branches == 1:
        n = 1
        e, m = _scaled(cfg.finetune_epochs_per_branch * n,
                       [k * cfg.finetune_milestone_step * n for k in (1, 2, 3, 4)], div)
        stages.append(Stage("finetune", 1, "alternating", e, m))
        return stages
    for n in range(2, n_branches + 1):
        e, m = _scaled(cfg.finetune_epochs_per_branch * n,
                       [k * cfg.finetune_milestone_step * n for k in (1, 2, 3, 4)], div)
        stages.append(Stage(f"branch{n}", n, cfg.branch_sampling, e, m, adds_branch=True))
    return stages


def iterations_per_epoch(n_images: int, cfg: TrainConfig) -> int:
    return max(1, -(-n_images * cfg.repeat // cfg.batch_size))


def stage_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator per (purpose, stage, step); order-free and thread-safe."""
    return np.random.default_rng([seed, *keys])


def scale_schedule(stages: list[Stage], iters_per_epoch: int, seed: int = 0,
                   limit: int | None = None) -> Iterator[tuple[int, int, int, ScaleDraw]]:
    """Yield ``(stage_index, epoch, stage_iteration, draw)`` without training."""
    count = 0
    for si, st in enumerate(stages):
        it = 0
        for epoch in range(st.epochs):
            for _ in range(iters_per_epoch):
                rng = stage_rng(seed, 1, si, it)
                yield si, epoch, it, sample_scale(st.sampling, it, rng, st.n_branches)
                it += 1
                count += 1
                if limit is not None and count >= limit:
                    return


def draw_scales(kind: str, n: int, seed: int = 0, n_branches: int = 1) -> np.ndarray:
    """``n`` consecutive total-scale draws of one sampling kind."""
    return np.array([
        sample_scale(kind, i, stage_rng(seed, 1, 0, i), n_branches).r for i in range(n)
    ])
