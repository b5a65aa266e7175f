"""Small-model contrastive trainer.

Trains the toy point encoder (and the log-temperature) with plain momentum
SGD against frozen text and image-view encoders, consuming batches straight
from the prefetching pipeline.  Deliberately modest: the point is a complete,
verifiable training loop over the composition pipeline, not state-of-the-art
representation quality.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .batcher import Batch, BatchConfig, run_pipeline
from .compose import SceneComposer
from .encoders import FrozenImageSurrogate, FrozenTextEncoder, ToyPointEncoder, save_checkpoint
from .losses import LossConfig, total_loss
from .pointcloud import DatasetIndex


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batches_per_epoch: int = 6
    lr: float = 0.1
    momentum: float = 0.9
    hidden: int = 64
    dim: int = 32
    encoder_seed: int = 0
    frozen_seed: int = 7

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ValueError("epochs and batches_per_epoch must be >= 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class TrainResult:
    encoder: ToyPointEncoder
    log_tau: float
    text_encoder: FrozenTextEncoder
    image_encoder: FrozenImageSurrogate
    history: list[dict] = field(default_factory=list)

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)


def write_history_csv(path: str | Path, history: list[dict]) -> None:
    columns = ["epoch", "total_loss", "text_loss", "image_loss", "tau", "retrieval_top1"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in history:
            out = dict(row)
            if out.get("retrieval_top1") is None:
                out["retrieval_top1"] = ""
            writer.writerow(out)


def train_toy(
    dataset: DatasetIndex,
    batch_cfg: BatchConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    composer: SceneComposer | None = None,
    eval_fn: Callable[[ToyPointEncoder, FrozenTextEncoder], float] | None = None,
    csv_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Run the full training loop and return the trained state.

    Only the point encoder's parameters and log tau are updated; the frozen
    encoders are constructed from train_cfg.frozen_seed and never touched
    (their checksums are stable across the run).  One history row per epoch
    records mean losses, the current temperature, and eval_fn's metric when
    provided; csv_path mirrors the history to disk and checkpoint_path saves
    the final state.
    """
    composer = composer or SceneComposer()
    point = ToyPointEncoder(hidden=train_cfg.hidden, dim=train_cfg.dim,
                            seed=train_cfg.encoder_seed)
    text = FrozenTextEncoder(dim=train_cfg.dim, seed=train_cfg.frozen_seed)
    image = FrozenImageSurrogate(dim=train_cfg.dim, seed=train_cfg.frozen_seed + 1)

    log_tau = loss_cfg.init_log_tau
    velocity = {name: np.zeros_like(value) for name, value in point.params.items()}
    velocity_log_tau = 0.0
    text_cache: dict[str, np.ndarray] = {}
    history: list[dict] = []
    epoch_rows: list[tuple[float, float, float]] = []
    result = TrainResult(encoder=point, log_tau=log_tau, text_encoder=text, image_encoder=image,
                         history=history)

    def embed_text(caption: str) -> np.ndarray:
        emb = text_cache.get(caption)
        if emb is None:
            emb = text.encode(caption)
            text_cache[caption] = emb
        return emb

    def step(batch: Batch) -> None:
        nonlocal log_tau, velocity_log_tau
        caches = []
        emb_3d = np.empty((len(batch), train_cfg.dim))
        emb_text = np.empty_like(emb_3d)
        emb_2d = np.zeros_like(emb_3d)  # composed rows stay zero and unread
        composed = np.zeros(len(batch), dtype=bool)
        for i, sample in enumerate(batch.samples):
            emb, cache = point.forward(sample.cloud.points)
            caches.append(cache)
            emb_3d[i] = emb
            emb_text[i] = embed_text(sample.caption)
            composed[i] = sample.composed
            if sample.surrogate_2d is not None:
                emb_2d[i] = sample.surrogate_2d
        res = total_loss(emb_3d, emb_text, emb_2d, composed, math.exp(log_tau), loss_cfg)
        if not math.isfinite(res.total):
            raise TrainingDivergedError(f"non-finite loss at batch {batch.index}")

        grads = point.zero_grads()
        for i, cache in enumerate(caches):
            for name, g in point.backward(cache, res.grad_3d[i]).items():
                grads[name] += g
        for name in point.params:
            velocity[name] = train_cfg.momentum * velocity[name] + grads[name]
            point.params[name] = point.params[name] - train_cfg.lr * velocity[name]
        velocity_log_tau = train_cfg.momentum * velocity_log_tau + res.grad_log_tau
        log_tau = loss_cfg.clamp_log_tau(log_tau - train_cfg.lr * velocity_log_tau)
        epoch_rows.append((res.total, res.text_block, res.image_block))

    total_batches = train_cfg.epochs * train_cfg.batches_per_epoch
    progressed = {"epoch": 0}

    def consume(batch: Batch) -> None:
        step(batch)
        if len(epoch_rows) == train_cfg.batches_per_epoch:
            rows = np.array(epoch_rows)
            epoch_rows.clear()
            progressed["epoch"] += 1
            metric = None
            if eval_fn is not None:
                metric = float(eval_fn(point, text))
            history.append({
                "epoch": progressed["epoch"],
                "total_loss": float(rows[:, 0].mean()),
                "text_loss": float(rows[:, 1].mean()),
                "image_loss": float(rows[:, 2].mean()),
                "tau": math.exp(log_tau),
                "retrieval_top1": metric,
            })

    run_pipeline(batch_cfg, dataset, composer, consume, total_batches,
                 surrogate_fn=image.encode)

    result.log_tau = log_tau
    if csv_path is not None:
        write_history_csv(csv_path, history)
    if checkpoint_path is not None:
        tensors = dict(point.params)
        tensors["log_tau"] = np.array(log_tau)
        save_checkpoint(checkpoint_path, tensors, meta={
            "hidden": train_cfg.hidden,
            "dim": train_cfg.dim,
            "encoder_seed": train_cfg.encoder_seed,
            "frozen_seed": train_cfg.frozen_seed,
            "alpha": loss_cfg.alpha,
            "table_size": text.table_size,
            "grid": image.grid,
        })
    return result
