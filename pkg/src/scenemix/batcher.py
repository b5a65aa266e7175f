"""Mixed single/composed batch assembly and the prefetching pipeline.

Each batch slot independently flips a Bernoulli(alpha) coin: heads builds a
composed scene with K ~ Uniform{2..max_objects} components, tails takes one
augmented object.  All randomness for a slot derives from (global_seed,
batch_index, sample_index), so batch contents are a pure function of those
indices and never depend on worker count or scheduling.  The pipeline runs
assembly on worker threads behind a bounded reorder buffer that delivers
batches strictly in index order.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import apply
from .compose import SceneComposer
from .pointcloud import DatasetIndex, PointCloud, subsample


class PipelineError(RuntimeError):
    """A worker failed; carries the index of the batch that failed."""

    def __init__(self, batch_index: int, message: str):
        super().__init__(f"batch {batch_index}: {message}")
        self.batch_index = batch_index


@dataclass(frozen=True)
class BatchConfig:
    batch_size: int = 64
    alpha: float = 0.5
    max_objects: int = 3
    target_points: int = 10000
    prefetch_depth: int = 8
    workers: int = 4
    global_seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.max_objects < 1:
            raise ValueError(f"max_objects must be >= 1, got {self.max_objects}")
        if self.target_points < 1:
            raise ValueError(f"target_points must be >= 1, got {self.target_points}")
        if self.prefetch_depth < 1:
            raise ValueError(f"prefetch_depth must be >= 1, got {self.prefetch_depth}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.global_seed < 0:
            raise ValueError(f"global_seed must be >= 0, got {self.global_seed}")


@dataclass(frozen=True)
class BatchSample:
    """One training sample.  surrogate_2d is the projected-view embedding of
    the un-augmented source object and exists exactly when the sample is a
    single (composed scenes have no single rendered view to stand in for)."""

    cloud: PointCloud
    caption: str
    composed: bool
    surrogate_2d: np.ndarray | None
    anchor_id: str


@dataclass(frozen=True)
class Batch:
    index: int
    samples: tuple[BatchSample, ...]

    def __len__(self) -> int:
        return len(self.samples)


def sample_rng(global_seed: int, batch_index: int, sample_index: int) -> np.random.Generator:
    """The per-slot generator; identical arguments give an identical stream
    on every platform and under any scheduling."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, batch_index, sample_index]))


def assemble_sample(
    batch_index: int,
    sample_index: int,
    cfg: BatchConfig,
    dataset: DatasetIndex,
    composer: SceneComposer,
    surrogate_fn: Callable[[PointCloud], np.ndarray] | None = None,
) -> BatchSample:
    """Build one slot.  The draw order (anchor, coin, then branch-specific
    draws) is fixed; max_objects = 1 disables composition outright, which
    makes it the no-composition baseline regardless of alpha."""
    rng = sample_rng(cfg.global_seed, batch_index, sample_index)
    anchor = dataset.at(int(rng.integers(0, len(dataset))))
    composed = bool(rng.random() < cfg.alpha) and cfg.max_objects >= 2
    if composed:
        k = int(rng.integers(2, cfg.max_objects + 1))
        scene = composer.sample_and_compose(dataset, anchor, k, rng,
                                            target_points=cfg.target_points)
        return BatchSample(cloud=scene.cloud, caption=scene.refined_caption,
                           composed=True, surrogate_2d=None, anchor_id=anchor.id)
    cloud = apply(anchor.cloud, composer.policies.single, rng)
    cloud = subsample(cloud, cfg.target_points, rng, method=composer.subsample_method)
    surrogate = None if surrogate_fn is None else surrogate_fn(anchor.cloud)
    return BatchSample(cloud=cloud, caption=anchor.caption, composed=False,
                       surrogate_2d=surrogate, anchor_id=anchor.id)


def assemble_batch(
    batch_index: int,
    cfg: BatchConfig,
    dataset: DatasetIndex,
    composer: SceneComposer,
    surrogate_fn: Callable[[PointCloud], np.ndarray] | None = None,
) -> Batch:
    if len(dataset) < cfg.max_objects:
        raise ValueError(f"dataset has {len(dataset)} objects, need >= {cfg.max_objects}")
    samples = tuple(
        assemble_sample(batch_index, i, cfg, dataset, composer, surrogate_fn)
        for i in range(cfg.batch_size))
    return Batch(index=batch_index, samples=samples)


def count_configurations(num_objects: int, max_objects: int) -> int:
    """Exact count of distinct composable configurations: ordered selections
    of k distinct objects for k = 1..max_objects, times a relation choice for
    each of the k - 1 links.  Exact integer arithmetic; the result grows far
    past any float or fixed-width range."""
    if num_objects < 1:
        raise ValueError(f"num_objects must be >= 1, got {num_objects}")
    if not 1 <= max_objects <= num_objects:
        raise ValueError(
            f"max_objects must be in [1, num_objects], got {max_objects} with {num_objects} objects")
    return sum(math.perm(num_objects, k) * 3 ** (k - 1) for k in range(1, max_objects + 1))


@dataclass
class PipelineStats:
    delivered: int = 0
    stopped_early: bool = False
    max_queue_depth: int = 0
    assembly_seconds: list[float] = field(default_factory=list)

    @property
    def mean_assembly_seconds(self) -> float:
        return float(np.mean(self.assembly_seconds)) if self.assembly_seconds else 0.0


def run_pipeline(
    cfg: BatchConfig,
    dataset: DatasetIndex,
    composer: SceneComposer,
    consumer: Callable[[Batch], bool | None],
    num_batches: int,
    surrogate_fn: Callable[[PointCloud], np.ndarray] | None = None,
    start_index: int = 0,
) -> PipelineStats:
    """Produce batches start_index .. start_index + num_batches - 1 through a
    bounded prefetch stage.

    Workers claim batch indices in order but never run more than
    prefetch_depth batches ahead of delivery, so at most prefetch_depth
    finished batches wait in the reorder buffer.  The consumer runs on the
    calling thread, receives batches strictly in index order, and may return
    False to shut the pipeline down early.  A worker exception aborts the run
    as a PipelineError naming the failing batch.
    """
    if num_batches < 0:
        raise ValueError(f"num_batches must be >= 0, got {num_batches}")
    end_index = start_index + num_batches
    cond = threading.Condition()
    ready: dict[int, tuple[Batch, float]] = {}
    state = {"claim": start_index, "deliver": start_index, "stop": False}
    failure: list[tuple[int, BaseException]] = []
    stats = PipelineStats()

    def worker() -> None:
        while True:
            with cond:
                while (not state["stop"] and not failure
                       and state["claim"] < end_index
                       and state["claim"] - state["deliver"] >= cfg.prefetch_depth):
                    cond.wait()
                if state["stop"] or failure or state["claim"] >= end_index:
                    return
                index = state["claim"]
                state["claim"] += 1
            started = time.perf_counter()
            try:
                batch = assemble_batch(index, cfg, dataset, composer, surrogate_fn)
            except BaseException as exc:  # surfaced to the caller, not swallowed
                with cond:
                    if not failure:
                        failure.append((index, exc))
                    cond.notify_all()
                return
            elapsed = time.perf_counter() - started
            with cond:
                ready[index] = (batch, elapsed)
                stats.max_queue_depth = max(stats.max_queue_depth, len(ready))
                cond.notify_all()

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(cfg.workers)]
    for t in threads:
        t.start()
    try:
        while stats.delivered < num_batches:
            with cond:
                while not failure and state["deliver"] not in ready:
                    cond.wait()
                if failure:
                    index, exc = failure[0]
                    raise PipelineError(index, str(exc)) from exc
                batch, elapsed = ready.pop(state["deliver"])
                state["deliver"] += 1
                cond.notify_all()
            stats.assembly_seconds.append(elapsed)
            verdict = consumer(batch)
            stats.delivered += 1
            if verdict is False:
                stats.stopped_early = True
                break
    finally:
        with cond:
            state["stop"] = True
            cond.notify_all()
        for t in threads:
            t.join()
    return stats
