"""Optimization loop: train_step, staged plans, metrics logging."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..cascade import CLIT
from ..checkpoint import save_checkpoint
from ..config import ConfigError, TrainConfig
from ..coords import QueryBatch
from ..numerics import Adam, GradientTape, MultiStepLR, ops
from .data import PatchPair, ScaleDraw, clip_scale, prepare_patch, sample_scale
from .plan import Stage, build_stages, iterations_per_epoch, stage_rng

log = logging.getLogger(__name__)

LOG_FIELDS = ("stage", "epoch", "iteration", "lr", "loss", "r_sampled", "r")


def batch_loss(model: CLIT, batch: list[PatchPair], factors=None):
    """Mean L1 over every sampled pixel of the batch (graph recorded if a tape is active)."""
    total = None
    for pair in batch:
        pred = model.predict(pair.lr, QueryBatch(pair.coords, pair.cell), factors)
        loss = ops.l1_loss(pred, pair.rgb.astype(pred.dtype))
        total = loss if total is None else total + loss
    return total * (1.0 / len(batch))


def train_step(model: CLIT, batch: list[PatchPair], optimizer: Adam, factors=None) -> float:
    """Forward on the sampled queries, L1, backward, one Adam update.

    Returns the loss measured before the update.
    """
    optimizer.zero_grad()
    with GradientTape() as tape:
        loss = batch_loss(model, batch, factors)
        tape.backward(loss)
    optimizer.step()
    return float(loss.data)


def gradient_norm(model: CLIT) -> float:
    sq = 0.0
    for p in model.parameters():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(sq))


@dataclass
class TrainResult:
    model: CLIT
    log: list[dict] = field(default_factory=list)
    stages: list[Stage] = field(default_factory=list)


class MetricsWriter:
    def __init__(self, path: str | Path | None):
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._w = csv.DictWriter(self._fh, fieldnames=LOG_FIELDS)
            self._w.writeheader()

    def write(self, row: dict) -> None:
        if self._fh is not None:
            self._w.writerow({k: row[k] for k in LOG_FIELDS})
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def _branch_factors(draw: ScaleDraw, n_branches: int) -> list[float]:
    if n_branches == 1:
        return [1.0]
    return draw.feature_factors()


def run_plan(
    model: CLIT,
    images: list[np.ndarray],
    cfg: TrainConfig,
    n_branches: int | None = None,
    branch_scales: tuple[float, ...] | None = None,
    out_dir: str | Path | None = None,
    workers: int = 0,
    on_step: Callable[[dict], None] | None = None,
    on_stage: Callable[[Stage, CLIT], None] | None = None,
) -> TrainResult:
    """Train ``model`` through every stage of the configured strategy.

    ``n_branches`` is the final branch count; the model must start with one
    branch for cumulative plans and gains the others stage by stage, using
    ``branch_scales`` (default 2 per added branch) as their inference feature
    scales. Each stage gets a fresh Adam state. ``on_stage`` is called at
    the start of every stage, after branches are added and before the first
    update.
    """
    if not images:
        raise ConfigError("training needs at least one image")
    n_final = n_branches if n_branches is not None else max(1, model.n_branches)
    stages = build_stages(cfg, n_final)
    if model.n_branches != stages[0].n_branches:
        raise ConfigError(
            f"model has {model.n_branches} branches but the plan starts with {stages[0].n_branches}"
        )
    out = Path(out_dir) if out_dir is not None else None
    writer = MetricsWriter(out / "metrics.csv" if out is not None else None)
    ipe = iterations_per_epoch(len(images), cfg)
    result = TrainResult(model=model, stages=stages)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
    total_steps = 0
    try:
        for si, stage in enumerate(stages):
            if stage.adds_branch:
                while model.n_branches < stage.n_branches:
                    k = model.n_branches
                    scale = branch_scales[k] if branch_scales is not None else 2.0
                    model.add_branch(stage_rng(cfg.seed, 3, si, k), scale)
            if model.n_branches != stage.n_branches:
                raise ConfigError(f"stage {stage.name} references {stage.n_branches} branches, model has {model.n_branches}")
            if on_stage is not None:
                on_stage(stage, model)
            optimizer = Adam(dict(model.named_parameters()), lr=cfg.lr)
            sched = MultiStepLR(cfg.lr, list(stage.milestones), cfg.gamma)
            log.info("stage %s: %d branches, %s sampling, %d epochs", stage.name,
                     stage.n_branches, stage.sampling, stage.epochs)
            it = 0
            for epoch in range(stage.epochs):
                optimizer.lr = sched.lr_at(epoch)
                order = stage_rng(cfg.seed, 2, si, epoch).permutation(
                    np.tile(np.arange(len(images)), cfg.repeat)
                )
                jobs = []
                for b in range(ipe):
                    idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                    if len(idx) == 0:
                        idx = order[: cfg.batch_size]
                    jobs.append((it + b, idx))

                def prepare(job, si=si, stage=stage):
                    step, idx = job
                    rng = stage_rng(cfg.seed, 1, si, step)
                    sampled = sample_scale(stage.sampling, step, rng, stage.n_branches)
                    smallest = min(min(images[i].shape[:2]) for i in idx)
                    draw = clip_scale(sampled, (smallest, smallest), cfg.lr_patch)
                    batch = [
                        prepare_patch(images[i], draw, rng, cfg.lr_patch, cfg.pixels_per_patch, cfg.augment)
                        for i in idx
                    ]
                    return sampled, draw, batch

                prepared = pool.map(prepare, jobs) if pool is not None else map(prepare, jobs)
                for sampled, draw, batch in prepared:
                    loss = train_step(model, batch, optimizer, _branch_factors(draw, stage.n_branches))
                    row = {
                        "stage": stage.name, "epoch": epoch, "iteration": it,
                        "lr": optimizer.lr, "loss": loss, "r_sampled": sampled.r, "r": batch[0].r,
                    }
                    result.log.append(row)
                    writer.write(row)
                    if on_step is not None:
                        on_step(row)
                    it += 1
                    total_steps += 1
                    if cfg.max_iterations is not None and total_steps >= cfg.max_iterations:
                        break
                if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(model, out / f"{stage.name}_epoch{epoch + 1}.ckpt",
                                    {"stage": stage.name, "epoch": epoch + 1})
                if cfg.max_iterations is not None and total_steps >= cfg.max_iterations:
                    break
            if out is not None:
                save_checkpoint(model, out / f"{stage.name}.ckpt", {"stage": stage.name})
            if cfg.max_iterations is not None and total_steps >= cfg.max_iterations:
                break
    finally:
        writer.close()
        if pool is not None:
            pool.shutdown()
    if out is not None:
        save_checkpoint(model, out / "final.ckpt", {"stages": [s.name for s in stages]})
    return result


def fit_single_image(
    model: CLIT,
    hr: np.ndarray,
    scale: float,
    iterations: int,
    lr: float = 1e-4,
    pixels: int = 48 * 48,
    seed: int = 0,
    milestones: tuple[int, ...] = (),
    on_step: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Overfit a model on one HR image at a fixed scale (no crops or flips).

    The LR input is the cubic downsampling of ``hr`` by ``scale``; every step
    draws ``pixels`` random HR pixels as supervision.
    """
    from ..imaging import bicubic_downsample
    from .data import sample_pixels

    h, w = hr.shape[:2]
    lr_img = bicubic_downsample(hr, round(h / scale), round(w / scale)).astype(np.float32)
    optimizer = Adam(dict(model.named_parameters()), lr=lr)
    sched = MultiStepLR(lr, list(milestones), 0.5)
    rng = np.random.default_rng(seed)
    losses = []
    for step in range(iterations):
        optimizer.lr = sched.lr_at(step)
        coords, rgb = sample_pixels(hr, min(pixels, h * w), rng)
        pair = PatchPair(lr=lr_img, hr=hr, r=h / lr_img.shape[0], coords=coords, rgb=rgb)
        loss = train_step(model, [pair], optimizer)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
    return losses
