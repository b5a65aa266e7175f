"""Mixing-style composition baselines.

Three standard two-cloud mixers for comparison against relation-driven scene
composition: random index replacement, query-neighborhood replacement, and
greedy-matched convex interpolation.  Baseline captions join the two object
captions with "and"; no spatial relation is implied or constructed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .captions import RawCaption, join_with_phrase
from .pointcloud import PointCloud


class MixMethod(enum.Enum):
    CUTMIX_R = "cutmix-r"
    CUTMIX_K = "cutmix-k"
    MIXUP = "mixup"


@dataclass(frozen=True)
class MixSpec:
    method: MixMethod
    lam: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


def sample_mix_lambda(rng: np.random.Generator) -> float:
    """Mixing ratio draw, Beta(1, 1)."""
    while True:
        lam = float(rng.beta(1.0, 1.0))
        if 0.0 < lam < 1.0:
            return lam


def _check_pair(a: PointCloud, b: PointCloud) -> int:
    if len(a) != len(b):
        raise ValueError(f"mixing needs equal-size clouds, got {len(a)} and {len(b)}")
    return len(a)


def _mixed_colors(a: PointCloud, b: PointCloud, idx_a: np.ndarray,
                  idx_b: np.ndarray) -> np.ndarray | None:
    # Colors survive only when both inputs carry them.
    if a.colors is None or b.colors is None:
        return None
    cols = a.colors.copy()
    cols[idx_a] = b.colors[idx_b]
    return cols


def cutmix_r(a: PointCloud, b: PointCloud, spec: MixSpec) -> PointCloud:
    """Replace a uniform subset of floor(lam * n) of a's points with a
    uniform subset of b's points.  lam -> 0 returns a unchanged."""
    n = _check_pair(a, b)
    rng = np.random.default_rng(spec.seed)
    m = int(np.floor(spec.lam * n))
    idx_a = rng.choice(n, size=m, replace=False)
    idx_b = rng.choice(n, size=m, replace=False)
    pts = a.points.copy()
    pts[idx_a] = b.points[idx_b]
    return PointCloud(pts, _mixed_colors(a, b, idx_a, idx_b))


def cutmix_k(a: PointCloud, b: PointCloud, spec: MixSpec) -> PointCloud:
    """Replace the floor(lam * n) nearest neighbors of a random query point
    in a with the same count of the query's nearest neighbors in b, so the
    swapped region is spatially contiguous in both clouds."""
    n = _check_pair(a, b)
    rng = np.random.default_rng(spec.seed)
    m = int(np.floor(spec.lam * n))
    query = a.points[rng.integers(0, n)]
    idx_a = np.argsort(np.linalg.norm(a.points - query, axis=1), kind="stable")[:m]
    idx_b = np.argsort(np.linalg.norm(b.points - query, axis=1), kind="stable")[:m]
    pts = a.points.copy()
    pts[idx_a] = b.points[idx_b]
    return PointCloud(pts, _mixed_colors(a, b, idx_a, idx_b))


def _greedy_matching(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """match[i] = index into b for a[i]; a's points claim their nearest unused
    b point in random visiting order."""
    n = a.shape[0]
    match = np.empty(n, dtype=np.int64)
    used = np.zeros(n, dtype=bool)
    for i in rng.permutation(n):
        d2 = np.einsum("ij,ij->i", b - a[i], b - a[i])
        d2[used] = np.inf
        j = int(np.argmin(d2))
        match[i] = j
        used[j] = True
    return match


def mixup(a: PointCloud, b: PointCloud, spec: MixSpec, matching: str = "greedy") -> PointCloud:
    """Convex per-point interpolation (1 - lam) * a + lam * b after one-to-one
    matching.  matching is "greedy" (nearest unused neighbor, random visit
    order) or "random" (uniform bijection)."""
    n = _check_pair(a, b)
    rng = np.random.default_rng(spec.seed)
    if matching == "greedy":
        match = _greedy_matching(a.points, b.points, rng)
    elif matching == "random":
        match = rng.permutation(n)
    else:
        raise ValueError(f"unknown matching '{matching}'")
    pts = (1.0 - spec.lam) * a.points + spec.lam * b.points[match]
    cols = None
    if a.colors is not None and b.colors is not None:
        cols = (1.0 - spec.lam) * a.colors + spec.lam * b.colors[match]
    return PointCloud(pts, cols)


def mix(a: PointCloud, b: PointCloud, spec: MixSpec, matching: str = "greedy") -> PointCloud:
    if spec.method is MixMethod.CUTMIX_R:
        return cutmix_r(a, b, spec)
    if spec.method is MixMethod.CUTMIX_K:
        return cutmix_k(a, b, spec)
    return mixup(a, b, spec, matching=matching)


def baseline_caption(caption_a: str, caption_b: str) -> RawCaption:
    """The baselines' caption rule: the two captions joined by "and"."""
    return join_with_phrase(caption_a, caption_b, "and")
