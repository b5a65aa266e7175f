"""Synthetic captioned primitive generator for self-contained runs.

Five shape families with randomized proportions, colors, and caption wording.
The proportion words in the captions (tall, flat, thin, rough, ...) describe
geometry that survives unit-sphere normalization, so a caption carries real
signal about its cloud; absolute size and color words are honest decoration.
Generation is a pure function of the seed: same seed, byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .pointcloud import DatasetIndex, load_dataset, write_cloud, PointCloud

SHAPES = ("sphere", "box", "cylinder", "cone", "ring")

_COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.7, 0.2),
    "blue": (0.2, 0.3, 0.85),
    "yellow": (0.9, 0.85, 0.2),
    "purple": (0.6, 0.25, 0.75),
    "orange": (0.95, 0.55, 0.1),
    "gray": (0.55, 0.55, 0.55),
}

# Per-shape proportion styles: word plus the dimensions it implies.
_STYLES = {
    "sphere": (("smooth", 0.004), ("rough", 0.06)),
    "box": (("cubic", (1.0, 1.0, 1.0)), ("flat", (1.0, 1.0, 0.28)), ("tall", (0.45, 0.45, 1.5))),
    "cylinder": (("tall", (0.32, 1.5)), ("squat", (0.85, 0.5))),
    "cone": (("sharp", (0.45, 1.5)), ("wide", (0.95, 0.55))),
    "ring": (("thin", (0.9, 0.1)), ("thick", (0.65, 0.3))),
}


def _sphere(rng: np.random.Generator, n: int, radius: float, noise: float) -> np.ndarray:
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * radius * (1.0 + rng.normal(0.0, noise, size=(n, 1)))


def _box(rng: np.random.Generator, n: int, half: np.ndarray) -> np.ndarray:
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    face_axis = rng.integers(0, 3, size=n)
    pts[np.arange(n), face_axis] = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return pts * half


def _cylinder(rng: np.random.Generator, n: int, radius: float, half_h: float) -> np.ndarray:
    side_area = 2.0 * np.pi * radius * 2.0 * half_h
    cap_area = 2.0 * np.pi * radius ** 2
    on_side = rng.random(n) < side_area / (side_area + cap_area)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    r = np.where(on_side, radius, radius * np.sqrt(rng.random(n)))
    z = np.where(on_side, rng.uniform(-half_h, half_h, size=n),
                 np.sign(rng.random(n) - 0.5) * half_h)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _cone(rng: np.random.Generator, n: int, radius: float, height: float) -> np.ndarray:
    on_side = rng.random(n) < 0.7
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    u = np.sqrt(rng.random(n))
    # Lateral surface: radius shrinks linearly toward the apex at +height/2.
    r = np.where(on_side, radius * u, radius * np.sqrt(rng.random(n)))
    z = np.where(on_side, height * (0.5 - u), -height / 2.0)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _ring(rng: np.random.Generator, n: int, major: float, minor: float) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    rad = major + minor * np.cos(phi)
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), minor * np.sin(phi)], axis=1)


_SIZE_WORDS = ((0.8, "small"), (1.25, "medium"), (np.inf, "large"))

_TEMPLATES = (
    "a {size} {color} {style} {shape}",
    "a {style} {color} {shape}",
    "a {color} {shape} that is {style} and {size}",
)


def _generate_one(shape: str, rng: np.random.Generator, n_points: int) -> tuple[np.ndarray, str, str]:
    styles = _STYLES[shape]
    style_word, style_dims = styles[rng.integers(0, len(styles))]
    scale = float(rng.uniform(0.45, 1.6))
    jitter = lambda v: v * float(rng.uniform(0.85, 1.15))

    if shape == "sphere":
        pts = _sphere(rng, n_points, radius=jitter(0.8), noise=style_dims)
    elif shape == "box":
        half = np.array([jitter(d) for d in style_dims]) * 0.8
        pts = _box(rng, n_points, half)
    elif shape == "cylinder":
        pts = _cylinder(rng, n_points, radius=jitter(style_dims[0]), half_h=jitter(style_dims[1]) / 2.0)
    elif shape == "cone":
        pts = _cone(rng, n_points, radius=jitter(style_dims[0]), height=jitter(style_dims[1]))
    else:
        pts = _ring(rng, n_points, major=jitter(style_dims[0]), minor=jitter(style_dims[1]))

    if shape != "sphere":
        pts = pts + rng.normal(0.0, 0.008, size=pts.shape)
    pts = pts * scale

    color_word = list(_COLORS)[rng.integers(0, len(_COLORS))]
    size_word = next(word for limit, word in _SIZE_WORDS if scale < limit)
    template = _TEMPLATES[rng.integers(0, len(_TEMPLATES))]
    caption = template.format(size=size_word, color=color_word, style=style_word, shape=shape)
    return pts, caption, color_word


def gen_primitives(
    out_dir: str | Path,
    count_per_class: int,
    seed: int,
    points_per_object: int = 1024,
) -> DatasetIndex:
    """Write a primitives dataset and return its loaded index.

    Layout matches load_dataset: objects/<id>.ply plus captions.jsonl.  Each
    object's randomness derives from (seed, class, instance), so regenerating
    with the same seed reproduces every byte.
    """
    if count_per_class < 1:
        raise ValueError(f"count_per_class must be >= 1, got {count_per_class}")
    if points_per_object < 64:
        raise ValueError(f"points_per_object must be >= 64, got {points_per_object}")
    out_dir = Path(out_dir)
    (out_dir / "objects").mkdir(parents=True, exist_ok=True)
    records = []
    for class_index, shape in enumerate(SHAPES):
        for instance in range(count_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, class_index, instance]))
            pts, caption, color_word = _generate_one(shape, rng, points_per_object)
            base = np.array(_COLORS[color_word])
            colors = np.clip(base + rng.normal(0.0, 0.03, size=pts.shape), 0.0, 1.0)
            object_id = f"{shape}_{instance:04d}"
            write_cloud(out_dir / "objects" / f"{object_id}.ply", PointCloud(pts, colors))
            records.append({"id": object_id, "caption": caption})
    with open(out_dir / "captions.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return load_dataset(out_dir)
