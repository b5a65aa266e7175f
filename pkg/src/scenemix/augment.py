"""Stochastic point-cloud augmentation with per-context policies.

Three contexts share one transform family and differ only in their parameter
ranges: standalone training samples get full rotations plus translations,
components about to be composed into a scene get full yaw but only slight
tilts and no translation (placement owns all relative positioning), and the
merged final scene gets the component rotation limits with translations back
on.  The vertical axis is z.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .pointcloud import PointCloud, normalize_unit_sphere


class Mode(enum.Enum):
    SINGLE = "single"
    PRE_COMPOSE = "pre_compose"
    FINAL_SCENE = "final_scene"


@dataclass(frozen=True)
class AugmentPolicy:
    """Parameter ranges for one augmentation context.

    Angles are radians; a draw for each rotation is uniform on
    [-range, +range], so yaw_range = pi covers every heading.  shift_range is
    the half-width of the uniform translation cube.
    """

    mode: Mode
    dropout_rate: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    yaw_range: float = math.pi
    tilt_range: float = math.pi / 36
    shift_range: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.yaw_range < 0.0 or self.tilt_range < 0.0 or self.shift_range < 0.0:
            raise ValueError("rotation and shift ranges must be non-negative")


def default_policy(mode: Mode) -> AugmentPolicy:
    """The stock policy for a context.

    SINGLE: full yaw, tilts up to pi/6, shifts up to 0.2.
    PRE_COMPOSE: full yaw, tilts up to pi/36, no shift.
    FINAL_SCENE: PRE_COMPOSE rotations with shifts up to 0.2.
    All three drop 10% of points and scale by 0.9-1.1.
    """
    if mode is Mode.SINGLE:
        return AugmentPolicy(mode, tilt_range=math.pi / 6, shift_range=0.2)
    if mode is Mode.PRE_COMPOSE:
        return AugmentPolicy(mode, shift_range=0.0)
    if mode is Mode.FINAL_SCENE:
        return AugmentPolicy(mode, shift_range=0.2)
    raise ValueError(f"unknown mode {mode!r}")


def identity_policy(mode: Mode) -> AugmentPolicy:
    """A policy whose apply() reduces to unit-sphere normalization."""
    return AugmentPolicy(mode, dropout_rate=0.0, scale_range=(1.0, 1.0),
                         yaw_range=0.0, tilt_range=0.0, shift_range=0.0)


@dataclass(frozen=True)
class PolicyBundle:
    """One policy per context, passed around as a unit."""

    single: AugmentPolicy
    pre_compose: AugmentPolicy
    final_scene: AugmentPolicy

    @classmethod
    def default(cls) -> "PolicyBundle":
        return cls(default_policy(Mode.SINGLE), default_policy(Mode.PRE_COMPOSE),
                   default_policy(Mode.FINAL_SCENE))

    @classmethod
    def identity(cls) -> "PolicyBundle":
        return cls(identity_policy(Mode.SINGLE), identity_policy(Mode.PRE_COMPOSE),
                   identity_policy(Mode.FINAL_SCENE))

    def for_mode(self, mode: Mode) -> AugmentPolicy:
        return {Mode.SINGLE: self.single, Mode.PRE_COMPOSE: self.pre_compose,
                Mode.FINAL_SCENE: self.final_scene}[mode]


def rotation_matrix(yaw: float, tilt_x: float, tilt_y: float) -> np.ndarray:
    """R = Rx(tilt_x) @ Ry(tilt_y) @ Rz(yaw): heading first, then small tilts."""
    cz, sz = math.cos(yaw), math.sin(yaw)
    cx, sx = math.cos(tilt_x), math.sin(tilt_x)
    cy, sy = math.cos(tilt_y), math.sin(tilt_y)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rx @ ry @ rz


def apply(
    cloud: PointCloud,
    policy: AugmentPolicy,
    rng: np.random.Generator,
    return_indices: bool = False,
):
    """Run the transform chain: normalize, dropout, scale, rotate, translate.

    Rotations are about the origin, which the leading normalization has just
    made the centroid.  With return_indices=True the second return value maps
    each output point back to its index in the input cloud (dropout is the
    only step that removes points, so the map is a sorted subset).
    """
    cloud = normalize_unit_sphere(cloud)
    n = len(cloud)

    keep = rng.random(n) >= policy.dropout_rate
    if not keep.any():
        keep[rng.integers(0, n)] = True
    indices = np.flatnonzero(keep)
    pts = cloud.points[indices]

    scale = rng.uniform(policy.scale_range[0], policy.scale_range[1])
    yaw = rng.uniform(-policy.yaw_range, policy.yaw_range)
    tilt_x = rng.uniform(-policy.tilt_range, policy.tilt_range)
    tilt_y = rng.uniform(-policy.tilt_range, policy.tilt_range)
    shift = rng.uniform(-policy.shift_range, policy.shift_range, size=3)

    pts = (pts * scale) @ rotation_matrix(yaw, tilt_x, tilt_y).T + shift
    out = PointCloud(pts, None if cloud.colors is None else cloud.colors[indices])
    if return_indices:
        return out, indices
    return out
