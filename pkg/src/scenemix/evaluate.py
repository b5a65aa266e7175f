"""Composed-scene retrieval evaluation, relation predicates, repositioning.

Three tools measure what composition buys: a scene retrieval benchmark built
by pairing every base object with sampled partners, geometric predicates that
decide whether two placed components actually satisfy a relation, and a
derivative-free offset search that drags one component around a frozen scene
until a caption with a new relation fits best.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .captions import compose_raw, rule_refine
from .compose import ComposedScene, SceneComposer, sample_spec
from .encoders import FrozenTextEncoder, ToyPointEncoder
from .pointcloud import DatasetIndex, PointCloud, normalize_unit_sphere
from .relations import Relation


@dataclass(frozen=True)
class EvalItem:
    """One retrieval row: the cloud to embed, the caption that should match
    it, and (for composed rows) the full scene provenance."""

    id: str
    cloud: PointCloud
    caption: str
    scene: ComposedScene | None = None


@dataclass
class NComposedDataset:
    """One scene per base object, each pairing the object with n - 1 sampled
    partners; n = 1 degenerates to the normalized base objects themselves."""

    n: int
    items: list[EvalItem]

    def __len__(self) -> int:
        return len(self.items)


def build_ncomposed(
    base: DatasetIndex,
    n: int,
    composer: SceneComposer,
    seed: int,
    target_points: int = 10000,
) -> NComposedDataset:
    """Deterministically expand a base dataset into an n-object benchmark.

    Every base object anchors exactly one scene; partners and relations are
    drawn from a per-anchor stream seeded by (seed, anchor position), so the
    benchmark is a pure function of (base, n, seed, composer).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    items: list[EvalItem] = []
    for position in range(len(base)):
        anchor = base.at(position)
        if n == 1:
            items.append(EvalItem(id=anchor.id,
                                  cloud=normalize_unit_sphere(anchor.cloud),
                                  caption=anchor.caption))
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, position]))
        spec = sample_spec(base, anchor, n, rng, target_points=target_points)
        scene = composer.compose(spec)
        items.append(EvalItem(id=anchor.id, cloud=scene.cloud,
                              caption=scene.refined_caption, scene=scene))
    return NComposedDataset(n=n, items=items)


@dataclass(frozen=True)
class RetrievalReport:
    size: int
    text_to_cloud: dict[int, float]
    cloud_to_text: dict[int, float]

    @property
    def averaged_top1(self) -> float:
        return 0.5 * (self.text_to_cloud[1] + self.cloud_to_text[1])


def _stable_ranks(sim: np.ndarray) -> np.ndarray:
    """rank[i] of the true match i for each query row, under descending
    score with ties broken by ascending index."""
    d = sim.shape[0]
    true_scores = np.diag(sim)
    higher = (sim > true_scores[:, None]).sum(axis=1)
    tied_before = ((sim == true_scores[:, None]) & (np.arange(d)[None, :] < np.arange(d)[:, None])).sum(axis=1)
    return higher + tied_before


def eval_retrieval(
    embed_cloud: Callable[[PointCloud], np.ndarray],
    embed_text: Callable[[str], np.ndarray],
    dataset: NComposedDataset,
    ks: Sequence[int] = (1, 5),
) -> RetrievalReport:
    """Cosine-similarity retrieval in both directions over the benchmark.

    Row i of each modality matrix corresponds to item i, so the ground-truth
    match is the diagonal.  Accuracy at k counts queries whose true match
    ranks inside the top k (stable-index tie-breaking, so duplicate scores
    cannot flatter the result).
    """
    if not dataset.items:
        raise ValueError("cannot evaluate an empty dataset")
    clouds = np.stack([embed_cloud(item.cloud) for item in dataset.items])
    texts = np.stack([embed_text(item.caption) for item in dataset.items])
    t2c_ranks = _stable_ranks(texts @ clouds.T)
    c2t_ranks = _stable_ranks(clouds @ texts.T)
    size = len(dataset.items)
    return RetrievalReport(
        size=size,
        text_to_cloud={k: float((t2c_ranks < k).mean()) for k in ks},
        cloud_to_text={k: float((c2t_ranks < k).mean()) for k in ks},
    )


def sweep_n(
    embed_cloud: Callable[[PointCloud], np.ndarray],
    embed_text: Callable[[str], np.ndarray],
    base: DatasetIndex,
    composer: SceneComposer,
    n_values: Iterable[int],
    seed: int,
    target_points: int = 10000,
    csv_path: str | Path | None = None,
) -> list[tuple[int, RetrievalReport]]:
    """Retrieval accuracy as scene complexity n grows, optionally as CSV."""
    rows: list[tuple[int, RetrievalReport]] = []
    for n in n_values:
        dataset = build_ncomposed(base, n, composer, seed, target_points=target_points)
        rows.append((n, eval_retrieval(embed_cloud, embed_text, dataset)))
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "size", "top1_text_to_cloud", "top5_text_to_cloud",
                             "top1_cloud_to_text", "top5_cloud_to_text", "averaged_top1"])
            for n, report in rows:
                writer.writerow([n, report.size,
                                 report.text_to_cloud[1], report.text_to_cloud.get(5, ""),
                                 report.cloud_to_text[1], report.cloud_to_text.get(5, ""),
                                 report.averaged_top1])
    return rows


# ---------------------------------------------------------------------------
# Relation predicates on placed component point sets.
# ---------------------------------------------------------------------------


def _horizontal_overlap_ratio(p0: np.ndarray, p1: np.ndarray) -> float:
    lo0, hi0 = p0.min(axis=0), p0.max(axis=0)
    lo1, hi1 = p1.min(axis=0), p1.max(axis=0)
    ix = min(hi0[0], hi1[0]) - max(lo0[0], lo1[0])
    iy = min(hi0[1], hi1[1]) - max(lo0[1], lo1[1])
    inter = max(ix, 0.0) * max(iy, 0.0)
    a0 = (hi0[0] - lo0[0]) * (hi0[1] - lo0[1])
    a1 = (hi1[0] - lo1[0]) * (hi1[1] - lo1[1])
    return inter / max(min(a0, a1), 1e-12)


def _vertical_overlap_ratio(p0: np.ndarray, p1: np.ndarray) -> float:
    lo0, hi0 = p0[:, 2].min(), p0[:, 2].max()
    lo1, hi1 = p1[:, 2].min(), p1[:, 2].max()
    inter = max(min(hi0, hi1) - max(lo0, lo1), 0.0)
    return inter / max(min(hi0 - lo0, hi1 - lo1), 1e-12)


def _centroid_line_gap(p0: np.ndarray, p1: np.ndarray) -> float | None:
    """Extent gap along the horizontal line joining the centroids; None when
    the centroids are horizontally coincident (no line to measure along)."""
    u = p1.mean(axis=0) - p0.mean(axis=0)
    u[2] = 0.0
    norm = float(np.linalg.norm(u))
    if norm < 1e-9:
        return None
    u = u / norm
    return float((p1 @ u).min() - (p0 @ u).max())


def relation_predicate(
    p0: np.ndarray,
    p1: np.ndarray,
    relation: Relation,
    min_overlap: float = 0.25,
) -> bool:
    """Does placed component p1 satisfy ``relation`` against p0?

    over: p1's lowest point clears p0's highest and their horizontal
    bounding boxes overlap by at least min_overlap of the smaller box.
    under: the mirror image.  next to: vertical extents overlap by at least
    min_overlap and the gap along the centroid line is non-negative (the
    components sit beside each other without interpenetrating).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    if relation is Relation.OVER:
        return bool(p1[:, 2].min() > p0[:, 2].max()
                    and _horizontal_overlap_ratio(p0, p1) >= min_overlap)
    if relation is Relation.UNDER:
        return bool(p1[:, 2].max() < p0[:, 2].min()
                    and _horizontal_overlap_ratio(p0, p1) >= min_overlap)
    gap = _centroid_line_gap(p0, p1)
    return bool(gap is not None and gap >= 0.0
                and _vertical_overlap_ratio(p0, p1) >= min_overlap)


def split_components(scene: ComposedScene) -> list[np.ndarray]:
    """Per-component point arrays of the final scene cloud, via source tags."""
    return [scene.cloud.points[scene.source_ids == i]
            for i in range(len(scene.spec.components))]


def scene_satisfies(scene: ComposedScene, link: int = 0, min_overlap: float = 0.25) -> bool:
    parts = split_components(scene)
    return relation_predicate(parts[link], parts[link + 1],
                              scene.spec.relations[link], min_overlap=min_overlap)


# ---------------------------------------------------------------------------
# Repositioning: search over a rigid offset of component 1.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepositionResult:
    offset: np.ndarray
    trajectory: np.ndarray
    evaluations: int

    @property
    def initial_score(self) -> float:
        return float(self.trajectory[0])

    @property
    def final_score(self) -> float:
        return float(self.trajectory[-1])


_DEFAULT_STARTS: tuple[tuple[float, float, float], ...] = (
    (0.0, 0.0, 0.0),
    (0.0, 0.0, 1.2), (0.0, 0.0, -1.2),
    (1.2, 0.0, 0.0), (-1.2, 0.0, 0.0),
    (0.0, 1.2, 0.0), (0.0, -1.2, 0.0),
)


def coordinate_search(
    score_fn: Callable[[np.ndarray], float],
    init: Sequence[float] = (0.0, 0.0, 0.0),
    steps: int = 60,
    step_size: float = 0.4,
    min_step: float = 1e-3,
) -> RepositionResult:
    """Maximize score_fn over a 3-vector by axis-aligned probing.

    Each iteration evaluates +/- step along every axis and takes the best
    strict improvement; when no probe improves, the step halves.  The
    recorded trajectory is the best score so far, hence non-decreasing.
    """
    offset = np.asarray(init, dtype=np.float64).copy()
    best = float(score_fn(offset))
    trajectory = [best]
    evaluations = 1
    step = float(step_size)
    for _ in range(steps):
        best_candidate = None
        best_value = best
        for axis in range(3):
            for sign in (1.0, -1.0):
                candidate = offset.copy()
                candidate[axis] += sign * step
                value = float(score_fn(candidate))
                evaluations += 1
                if value > best_value + 1e-12:
                    best_value = value
                    best_candidate = candidate
        if best_candidate is None:
            step *= 0.5
            if step < min_step:
                break
        else:
            offset, best = best_candidate, best_value
        trajectory.append(best)
    return RepositionResult(offset=offset, trajectory=np.asarray(trajectory),
                            evaluations=evaluations)


def gradient_search(
    score_grad_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    init: Sequence[float] = (0.0, 0.0, 0.0),
    steps: int = 60,
    step_size: float = 0.4,
    min_step: float = 1e-3,
) -> RepositionResult:
    """Gradient-direction ascent with the same accept-or-halve loop, for
    scorers that can return analytic offset gradients."""
    offset = np.asarray(init, dtype=np.float64).copy()
    best, _ = score_grad_fn(offset)
    best = float(best)
    trajectory = [best]
    evaluations = 1
    step = float(step_size)
    for _ in range(steps):
        _, grad = score_grad_fn(offset)
        evaluations += 1
        norm = float(np.linalg.norm(grad))
        accepted = False
        if norm > 1e-12:
            candidate = offset + step * grad / norm
            value, _ = score_grad_fn(candidate)
            evaluations += 1
            if value > best + 1e-12:
                offset, best = candidate, float(value)
                accepted = True
        if not accepted:
            step *= 0.5
            if step < min_step:
                break
        trajectory.append(best)
    return RepositionResult(offset=offset, trajectory=np.asarray(trajectory),
                            evaluations=evaluations)


def grid_refine_search(
    score_fn: Callable[[np.ndarray], float],
    span: float = 0.8,
    cell: float = 0.4,
    top: int = 3,
    steps: int = 25,
    step_size: float = 0.2,
    min_step: float = 1e-3,
) -> RepositionResult:
    """Coarse lattice scan of the offset cube [-span, span]^3, then
    coordinate refinement from the best ``top`` cells.

    One evaluation per cell keeps the scan cheap while covering basins a
    local search from a handful of starts misses; refinement recovers the
    within-cell optimum.  The span doubles as a placement prior: offsets
    beyond it fling the component so far out that re-normalization shrinks
    the scene into degenerate blobs, which learned scorers love and real
    placements never look like.
    """
    axis = np.arange(-span, span + cell / 2, cell)
    cells = []
    for x in axis:
        for y in axis:
            for z in axis:
                offset = np.array([x, y, z])
                cells.append((float(score_fn(offset)), offset))
    evaluations = len(cells)
    cells.sort(key=lambda c: -c[0])
    best = None
    for _, offset in cells[:top]:
        run = coordinate_search(score_fn, init=offset, steps=steps,
                                step_size=step_size, min_step=min_step)
        evaluations += run.evaluations
        if best is None or run.final_score > best.final_score:
            best = run
    trajectory = np.maximum.accumulate(
        np.concatenate(([cells[0][0]], best.trajectory)))
    return RepositionResult(offset=best.offset, trajectory=trajectory,
                            evaluations=evaluations)


def retarget_caption(scene: ComposedScene, relation: Relation) -> str:
    """The scene's caption with its (first) relation swapped for ``relation``,
    run through the offline cleanup."""
    captions = [c.caption for c in scene.spec.components]
    relations = [relation] + list(scene.spec.relations[1:])
    return rule_refine(compose_raw(captions, relations))


def _text_target(scene: ComposedScene, target_relation: Relation,
                 text_encoder: FrozenTextEncoder) -> np.ndarray:
    """Text-space direction the reposition search ascends.

    The retargeted caption's embedding minus the current caption's: scoring
    against the difference cancels everything the two captions share (object
    words dominate the embeddings, and they don't move when the component
    does), leaving only the relation edit.  An empty edit — retargeting to
    the relation the caption already states — falls back to the plain target
    embedding.
    """
    target = text_encoder.encode(retarget_caption(scene, target_relation))
    current = text_encoder.encode(
        retarget_caption(scene, scene.spec.relations[0]))
    edit = target - current
    if float(np.linalg.norm(edit)) < 1e-9:
        return target
    return edit


def alignment_scorer(
    scene: ComposedScene,
    target_relation: Relation,
    point_encoder: ToyPointEncoder,
    text_encoder: FrozenTextEncoder,
) -> Callable[[np.ndarray], float]:
    """score(offset) = <point_enc(re-normalized scene with component 1
    translated by offset), edit direction toward the new relation's caption>.

    The moved cloud goes through unit-sphere normalization before encoding:
    the encoder only ever sees normalized clouds in training and evaluation,
    so raw shifted coordinates would be scored out of distribution.
    """
    base = scene.cloud.points
    mask = scene.source_ids == 1
    target = _text_target(scene, target_relation, text_encoder)

    def score(offset: np.ndarray) -> float:
        pts = base.copy()
        pts[mask] += offset
        q = normalize_unit_sphere(PointCloud(pts)).points
        return float(point_encoder.encode(q) @ target)

    return score


def alignment_scorer_with_grad(
    scene: ComposedScene,
    target_relation: Relation,
    point_encoder: ToyPointEncoder,
    text_encoder: FrozenTextEncoder,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Like :func:`alignment_scorer` but also returns the analytic gradient
    of the score with respect to the offset: input-coordinate gradients
    pushed through the normalization's centering and scaling (the farthest
    point treated as locally fixed) and summed over the moved points."""
    base = scene.cloud.points
    mask = scene.source_ids == 1
    target = _text_target(scene, target_relation, text_encoder)
    frac = float(mask.sum()) / len(base)

    def score_grad(offset: np.ndarray) -> tuple[float, np.ndarray]:
        pts = base.copy()
        pts[mask] += offset
        centered = pts - pts.mean(axis=0)
        norms = np.linalg.norm(centered, axis=1)
        far = int(np.argmax(norms))
        radius = float(norms[far])
        if radius < 1e-12:
            emb, _ = point_encoder.forward(np.zeros_like(centered))
            return float(emb @ target), np.zeros(3)
        emb, cache = point_encoder.forward(centered / radius)
        g = point_encoder.backward_points(cache, target)
        # q_j = c_j / r where dc_j/d(offset) = (1[j moved] - frac) * I and
        # dr/d(offset) follows the farthest point: r = |c_far|.
        s_far = (1.0 if mask[far] else 0.0) - frac
        dr = (s_far / radius) * centered[far]
        g_moved = g[mask].sum(axis=0) - frac * g.sum(axis=0)
        grad = g_moved / radius - (float((g * centered).sum()) / radius**2) * dr
        return float(emb @ target), grad

    return score_grad


def oracle_scorer(
    p0: np.ndarray,
    p1: np.ndarray,
    relation: Relation,
    min_overlap: float = 0.25,
    cap: float = 0.25,
) -> Callable[[np.ndarray], float]:
    """A geometry-only scorer whose maxima satisfy :func:`relation_predicate`.

    Each predicate condition becomes a continuous margin capped at ``cap``;
    the score is their sum, so every axis probe that moves a margin toward
    satisfaction improves the score.  Used to certify the search machinery
    independently of any learned model.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    base = np.asarray(p1, dtype=np.float64)

    def score(offset: np.ndarray) -> float:
        p1 = base + np.asarray(offset, dtype=np.float64)
        if relation is Relation.OVER:
            sep = p1[:, 2].min() - p0[:, 2].max()
            ov = _horizontal_overlap_ratio(p0, p1) - min_overlap
        elif relation is Relation.UNDER:
            sep = p0[:, 2].min() - p1[:, 2].max()
            ov = _horizontal_overlap_ratio(p0, p1) - min_overlap
        else:
            # Axis-aligned horizontal box gap: responsive to sideways motion
            # even while the components are stacked dead center.
            lo0, hi0 = p0.min(axis=0), p0.max(axis=0)
            lo1, hi1 = p1.min(axis=0), p1.max(axis=0)
            gx = max(lo1[0] - hi0[0], lo0[0] - hi1[0])
            gy = max(lo1[1] - hi0[1], lo0[1] - hi1[1])
            sep = max(gx, gy)
            ov = _vertical_overlap_ratio(p0, p1) - min_overlap
        return min(sep, cap) + min(ov, cap)

    return score


@dataclass(frozen=True)
class RepositionTask:
    """Move component 1 of a two-component scene so ``target_relation`` holds
    against component 0."""

    scene: ComposedScene
    target_relation: Relation

    def __post_init__(self) -> None:
        if len(self.scene.spec.components) < 2:
            raise ValueError("repositioning needs a scene with >= 2 components")


def reposition(
    task: RepositionTask,
    score_fn: Callable[[np.ndarray], float] | None = None,
    point_encoder: ToyPointEncoder | None = None,
    text_encoder: FrozenTextEncoder | None = None,
    method: str = "coordinate",
    steps: int = 60,
    step_size: float = 0.4,
    min_step: float = 1e-3,
    starts: Sequence[Sequence[float]] = _DEFAULT_STARTS,
) -> RepositionResult:
    """Search for the offset that best realizes the task's target relation.

    With no explicit score_fn the caption-alignment scorer is built from the
    given encoders.  "coordinate" and "gradient" restart from each entry of
    ``starts`` and keep the best final score; "grid" scans a coarse offset
    lattice and refines the best cells (the most reliable choice for learned
    scorers, whose landscapes are too bumpy for a handful of local starts).
    Gradient method requires the default scorer (it needs analytic input
    gradients).
    """
    if method not in ("coordinate", "gradient", "grid"):
        raise ValueError(f"unknown reposition method '{method}'")
    if score_fn is None and (point_encoder is None or text_encoder is None):
        raise ValueError("reposition needs either score_fn or both encoders")
    if method == "gradient":
        if score_fn is not None:
            raise ValueError("gradient method builds its own scorer; pass encoders instead")
        fn = alignment_scorer_with_grad(task.scene, task.target_relation,
                                        point_encoder, text_encoder)
        runs = [gradient_search(fn, init=start, steps=steps,
                                step_size=step_size, min_step=min_step)
                for start in starts]
    elif method == "grid":
        fn = score_fn or alignment_scorer(task.scene, task.target_relation,
                                          point_encoder, text_encoder)
        return grid_refine_search(fn, min_step=min_step)
    else:
        fn = score_fn or alignment_scorer(task.scene, task.target_relation,
                                          point_encoder, text_encoder)
        runs = [coordinate_search(fn, init=start, steps=steps,
                                  step_size=step_size, min_step=min_step)
                for start in starts]
    return max(runs, key=lambda r: r.final_score)


def reposition_satisfies(task: RepositionTask, result: RepositionResult,
                         min_overlap: float = 0.25) -> bool:
    """Predicate check on the scene after applying the found offset."""
    parts = split_components(task.scene)
    moved = parts[1] + result.offset
    return relation_predicate(parts[0], moved, task.target_relation, min_overlap=min_overlap)
