"""Chain composition of captioned objects into multi-object scenes.

Components are augmented under the pre-compose policy, placed one after
another against the previous component according to sampled relations, merged,
resampled to a fixed point budget, and finally augmented as a whole scene.
The scene caption is the component captions joined by the relation phrases.
Every random choice flows from the spec seed, so a spec composes to the same
scene anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import PolicyBundle, apply
from .captions import RawCaption, compose_raw, rule_refine
from .pointcloud import CaptionedObject, DatasetIndex, PointCloud, concat, \
    farthest_point_indices, subsample_indices, translate, write_cloud
from .relations import PlacementParams, Relation, placement_offset, sample_relation


@dataclass(frozen=True)
class CompositionSpec:
    """Everything needed to rebuild one scene: ordered components, the
    relation linking each component to its predecessor, the output point
    budget, and the seed driving every random draw."""

    components: tuple[CaptionedObject, ...]
    relations: tuple[Relation, ...]
    target_points: int
    seed: int

    def __post_init__(self) -> None:
        if len(self.components) < 2:
            raise ValueError(f"composition needs >= 2 components, got {len(self.components)}")
        if len(self.relations) != len(self.components) - 1:
            raise ValueError(
                f"{len(self.components)} components need {len(self.components) - 1} "
                f"relations, got {len(self.relations)}")
        if self.target_points < 1:
            raise ValueError(f"target_points must be >= 1, got {self.target_points}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class ComposedScene:
    """A finished scene and its provenance.

    cloud has exactly spec.target_points points.  source_ids maps each point
    to the index of the component it came from.  component_offsets[i] is the
    translation applied to component i during placement (zero for the first).
    """

    cloud: PointCloud
    raw_caption: RawCaption
    refined_caption: str
    spec: CompositionSpec
    component_offsets: np.ndarray
    source_ids: np.ndarray

    def __post_init__(self) -> None:
        if len(self.cloud) != self.spec.target_points:
            raise ValueError(
                f"scene has {len(self.cloud)} points, spec demands {self.spec.target_points}")
        if self.source_ids.shape != (len(self.cloud),):
            raise ValueError("source_ids must align with the scene cloud")


def compose_scene(
    spec: CompositionSpec,
    params: PlacementParams,
    policies: PolicyBundle,
    refine_fn: Callable[[RawCaption], str] | None = None,
    subsample_method: str = "uniform",
) -> ComposedScene:
    """Build the scene a spec describes.

    Placement chains: each component is augmented, then translated against
    the previously placed component per its relation.  The merged cloud is
    resampled to the point budget and augmented under the final-scene policy;
    if that augmentation's dropout removes points, uniformly repeated points
    top the cloud back up so the budget is exact.  refine_fn defaults to the
    offline rule-based caption cleanup.
    """
    if subsample_method not in ("uniform", "fps"):
        raise ValueError(f"unknown subsample method '{subsample_method}'")
    rng = np.random.default_rng(spec.seed)
    placed: list[PointCloud] = []
    offsets = np.zeros((len(spec.components), 3))
    prev: PointCloud | None = None
    for i, component in enumerate(spec.components):
        cloud = apply(component.cloud, policies.pre_compose, rng)
        if prev is not None:
            offset = placement_offset(cloud, prev, spec.relations[i - 1], params, rng)
            cloud = translate(cloud, offset)
            offsets[i] = offset
        placed.append(cloud)
        prev = cloud

    merged = concat(placed)
    source = np.repeat(np.arange(len(placed)), [len(p) for p in placed])
    if subsample_method == "fps" and len(merged) >= spec.target_points:
        pick = farthest_point_indices(merged.points, spec.target_points, rng)
    else:
        pick = subsample_indices(len(merged), spec.target_points, rng)
    merged = merged.take(pick)
    source = source[pick]

    final, kept = apply(merged, policies.final_scene, rng, return_indices=True)
    source = source[kept]
    if len(final) < spec.target_points:
        refill = subsample_indices(len(final), spec.target_points, rng)
        final = final.take(refill)
        source = source[refill]

    raw = compose_raw([c.caption for c in spec.components], spec.relations)
    refined = (refine_fn or rule_refine)(raw)
    return ComposedScene(cloud=final, raw_caption=raw, refined_caption=refined,
                         spec=spec, component_offsets=offsets, source_ids=source)


def sample_spec(
    index: DatasetIndex,
    anchor: CaptionedObject,
    k: int,
    rng: np.random.Generator,
    target_points: int = 10000,
) -> CompositionSpec:
    """Draw a K-object spec anchored on one object.

    Partners are k - 1 distinct objects sampled uniformly from the dataset
    excluding the anchor; relations are sampled uniformly and independently.
    The spec seed is drawn from rng, so identical rng state gives an
    identical, replayable spec.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    candidates = [e.id for e in index.entries if e.id != anchor.id]
    if len(candidates) < k - 1:
        raise ValueError(f"dataset has {len(candidates)} partners for '{anchor.id}', need {k - 1}")
    picked = rng.choice(len(candidates), size=k - 1, replace=False)
    partners = tuple(index.get(candidates[int(i)]) for i in picked)
    relations = tuple(sample_relation(rng) for _ in range(k - 1))
    seed = int(rng.integers(0, 2**63))
    return CompositionSpec(components=(anchor,) + partners, relations=relations,
                           target_points=target_points, seed=seed)


@dataclass(frozen=True)
class SceneComposer:
    """Placement parameters, augmentation policies, and the caption refiner,
    bundled so batch assembly and evaluation share one composition setup."""

    params: PlacementParams = field(default_factory=PlacementParams)
    policies: PolicyBundle = field(default_factory=PolicyBundle.default)
    refine_fn: Callable[[RawCaption], str] | None = None
    subsample_method: str = "uniform"

    def compose(self, spec: CompositionSpec) -> ComposedScene:
        return compose_scene(spec, self.params, self.policies,
                             refine_fn=self.refine_fn,
                             subsample_method=self.subsample_method)

    def sample_and_compose(self, index: DatasetIndex, anchor: CaptionedObject,
                           k: int, rng: np.random.Generator,
                           target_points: int = 10000) -> ComposedScene:
        return self.compose(sample_spec(index, anchor, k, rng, target_points=target_points))


# ---------------------------------------------------------------------------
# Scene directory layout: <dir>/scenes/<scene_id>.ply plus <dir>/scenes.jsonl
# with one provenance record per scene.
# ---------------------------------------------------------------------------


def scene_record(scene_id: str, scene: ComposedScene) -> dict:
    return {
        "scene_id": scene_id,
        "components": [c.id for c in scene.spec.components],
        "relations": [r.value for r in scene.spec.relations],
        "raw_caption": scene.raw_caption.text,
        "refined_caption": scene.refined_caption,
        "seed": scene.spec.seed,
    }


def write_scene_dir(out_dir: str | Path, records: Sequence[dict],
                    clouds: Sequence[PointCloud]) -> None:
    """Serialize scenes: one PLY per record under scenes/, records appended
    in order to scenes.jsonl.  records and clouds are parallel."""
    out_dir = Path(out_dir)
    (out_dir / "scenes").mkdir(parents=True, exist_ok=True)
    with open(out_dir / "scenes.jsonl", "w", encoding="utf-8") as fh:
        for record, cloud in zip(records, clouds):
            write_cloud(out_dir / "scenes" / f"{record['scene_id']}.ply", cloud)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_scene_dir(scene_dir: str | Path) -> list[dict]:
    """Load scenes.jsonl records, each with a 'ply_path' key added."""
    scene_dir = Path(scene_dir)
    records = []
    with open(scene_dir / "scenes.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            record["ply_path"] = scene_dir / "scenes" / f"{record['scene_id']}.ply"
            records.append(record)
    return records
