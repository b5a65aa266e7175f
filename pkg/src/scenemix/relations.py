"""Spatial relations and the displacement rule that realizes them.

A relation positions a new component against the previously placed one by
closing the gap between their extents along a relation-specific axis: the
vertical axis for over/under, a random horizontal direction for next-to.  A
fixed separation offset delta keeps the pair from touching and isotropic
Gaussian jitter epsilon keeps placements from being razor-exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud, translate

_UP = np.array([0.0, 0.0, 1.0])


class Relation(enum.Enum):
    OVER = "over"
    UNDER = "under"
    NEXT_TO = "next to"

    @property
    def phrase(self) -> str:
        """The caption connective for this relation."""
        return self.value

    @property
    def inverse(self) -> "Relation":
        if self is Relation.OVER:
            return Relation.UNDER
        if self is Relation.UNDER:
            return Relation.OVER
        return Relation.NEXT_TO


def sample_relation(rng: np.random.Generator) -> Relation:
    """Uniform draw over the three relations."""
    return list(Relation)[rng.integers(0, len(Relation))]


@dataclass(frozen=True)
class PlacementParams:
    """delta: extra separation along the placement direction.  noise_sigma:
    std of the isotropic Gaussian jitter added to the final translation."""

    delta: float = 0.05
    noise_sigma: float = 0.01

    def __post_init__(self) -> None:
        if self.delta < 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def displacement(
    p_new: PointCloud,
    p_prev: PointCloud,
    relation: Relation,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Base shift vector and unit direction for placing p_new against p_prev.

    OVER stacks p_new so its lowest point meets p_prev's highest (direction
    +z); UNDER mirrors that (direction -z).  NEXT_TO draws a direction d
    uniformly on the horizontal unit circle and shifts until p_new's rearmost
    extent along d meets p_prev's foremost extent (direction d).  The shift
    alone makes the extents exactly touch; separation is added by the caller.
    """
    if relation is Relation.OVER:
        gap = p_prev.points[:, 2].max() - p_new.points[:, 2].min()
        return gap * _UP, _UP.copy()
    if relation is Relation.UNDER:
        gap = p_prev.points[:, 2].min() - p_new.points[:, 2].max()
        return gap * _UP, -_UP
    theta = rng.uniform(0.0, 2.0 * np.pi)
    d = np.array([np.cos(theta), np.sin(theta), 0.0])
    gap = (p_prev.points @ d).max() - (p_new.points @ d).min()
    return gap * d, d


def placement_offset(
    p_new: PointCloud,
    p_prev: PointCloud,
    relation: Relation,
    params: PlacementParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full translation for p_new: shift + delta * direction + epsilon."""
    shift, direction = displacement(p_new, p_prev, relation, rng)
    eps = rng.normal(0.0, params.noise_sigma, size=3)
    return shift + params.delta * direction + eps


def place(
    p_new: PointCloud,
    p_prev: PointCloud,
    relation: Relation,
    params: PlacementParams,
    rng: np.random.Generator,
) -> PointCloud:
    """Translate p_new into its related position.  With noise_sigma = 0 the
    extent gap along the placement axis equals delta exactly."""
    return translate(p_new, placement_offset(p_new, p_prev, relation, params, rng))
