"""Point-cloud value types, PLY serialization, and the captioned-object dataset.

Everything downstream (augmentation, placement, composition, batching,
evaluation) moves through the two value types defined here.  Coordinates are
float64 in memory and float32 on disk; clouds are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


class DatasetError(Exception):
    """Raised when the on-disk dataset layout or captions file is invalid."""


class DuplicateIdError(DatasetError):
    """Raised when captions.jsonl lists the same object id twice."""


class EmptyDatasetError(DatasetError):
    """Raised when the dataset contains no usable objects."""


class PlyError(Exception):
    """Raised for malformed, truncated, or unsupported PLY files."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An immutable set of 3D points with optional per-point RGB in [0, 1].

    ``points`` is (N, 3) float64, N >= 1, all coordinates finite.  ``colors``
    is either None or an (N, 3) float64 array aligned with ``points``.  The
    backing arrays are marked read-only so a cloud can be shared freely.
    """

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError(f"points must be a non-empty (N, 3) array, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors, dtype=np.float64)
            if cols.shape != pts.shape:
                raise ValueError(f"colors shape {cols.shape} does not match points shape {pts.shape}")
            if not np.isfinite(cols).all() or cols.min() < 0.0 or cols.max() > 1.0:
                raise ValueError("colors must be finite and within [0, 1]")
            cols = np.ascontiguousarray(cols)
            cols.flags.writeable = False
            object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same colors, new coordinates.  Point count must be unchanged."""
        if points.shape[0] != len(self):
            raise ValueError("with_points cannot change the point count")
        return PointCloud(points, self.colors)

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Select points (and aligned colors) by index, repeats allowed."""
        cols = None if self.colors is None else self.colors[indices]
        return PointCloud(self.points[indices], cols)


@dataclass(frozen=True)
class CaptionedObject:
    """A dataset object: stable id, its cloud, and a human caption."""

    id: str
    cloud: PointCloud
    caption: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("object id must be non-empty")
        if not self.caption.strip():
            raise ValueError(f"object '{self.id}' has an empty caption")


def translate(cloud: PointCloud, offset: np.ndarray) -> PointCloud:
    offset = np.asarray(offset, dtype=np.float64).reshape(3)
    return cloud.with_points(cloud.points + offset)


def concat(clouds: list[PointCloud]) -> PointCloud:
    """Merge clouds into one.  Colors survive only if every input has them."""
    if not clouds:
        raise ValueError("concat needs at least one cloud")
    pts = np.concatenate([c.points for c in clouds], axis=0)
    cols = None
    if all(c.colors is not None for c in clouds):
        cols = np.concatenate([c.colors for c in clouds], axis=0)
    return PointCloud(pts, cols)


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    """Center on the centroid and scale so the farthest point has norm 1.

    A degenerate cloud (all points coincident) maps to all-zeros rather than
    dividing by zero.  Applying the function twice gives the same result as
    applying it once, up to float rounding.
    """
    pts = cloud.points - cloud.points.mean(axis=0)
    radius = float(np.linalg.norm(pts, axis=1).max())
    if radius < 1e-12:
        return cloud.with_points(np.zeros_like(pts))
    return cloud.with_points(pts / radius)


def subsample_indices(n: int, target: int, rng: np.random.Generator) -> np.ndarray:
    """Indices implementing the fixed-budget rule: a uniform subset without
    replacement when n >= target, otherwise all points plus uniformly repeated
    ones to reach the target."""
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target}")
    if n >= target:
        return rng.choice(n, size=target, replace=False)
    extra = rng.integers(0, n, size=target - n)
    return np.concatenate([np.arange(n), extra])


def farthest_point_indices(points: np.ndarray, target: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy max-min (farthest point) selection of ``target`` indices."""
    n = points.shape[0]
    chosen = np.empty(target, dtype=np.int64)
    chosen[0] = rng.integers(0, n)
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    for i in range(1, target):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(points - points[chosen[i]], axis=1))
    return chosen


def subsample(
    cloud: PointCloud,
    target: int,
    rng: np.random.Generator,
    method: str = "uniform",
) -> PointCloud:
    """Resample a cloud to exactly ``target`` points.

    ``method`` is "uniform" (default) or "fps" (farthest point sampling, used
    only on the downsampling path; the upsampling rule is shared).
    """
    n = len(cloud)
    if method == "uniform" or n < target:
        return cloud.take(subsample_indices(n, target, rng))
    if method == "fps":
        return cloud.take(farthest_point_indices(cloud.points, target, rng))
    raise ValueError(f"unknown subsample method '{method}'")


# ---------------------------------------------------------------------------
# PLY serialization.  Two layouts only: float32 x/y/z, optionally followed by
# uchar red/green/blue.  Binary files are little-endian.
# ---------------------------------------------------------------------------

_COORD_TYPES = {"float", "float32", "double", "float64"}
_COLOR_TYPES = {"uchar", "uint8"}


def write_cloud(path: str | Path, cloud: PointCloud, fmt: str = "binary") -> None:
    """Write a cloud as PLY.  ``fmt`` is "binary" (little-endian) or "ascii".

    Output bytes are a pure function of the cloud contents, which is what the
    reproducibility guarantees downstream lean on.
    """
    if fmt not in ("binary", "ascii"):
        raise ValueError(f"fmt must be 'binary' or 'ascii', got '{fmt}'")
    pts = cloud.points.astype("<f4")
    cols = None
    if cloud.colors is not None:
        cols = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)

    header = ["ply"]
    header.append("format binary_little_endian 1.0" if fmt == "binary" else "format ascii 1.0")
    header.append(f"element vertex {len(cloud)}")
    header += ["property float x", "property float y", "property float z"]
    if cols is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if fmt == "binary":
            if cols is None:
                fh.write(pts.tobytes())
            else:
                row = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                ("red", "u1"), ("green", "u1"), ("blue", "u1")])
                rec = np.empty(len(cloud), dtype=row)
                rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
                rec["red"], rec["green"], rec["blue"] = cols[:, 0], cols[:, 1], cols[:, 2]
                fh.write(rec.tobytes())
        else:
            lines = []
            for i in range(len(cloud)):
                vals = [str(v) for v in pts[i]]
                if cols is not None:
                    vals += [str(int(v)) for v in cols[i]]
                lines.append(" ".join(vals))
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def _parse_ply_header(fh) -> tuple[str, int, list[tuple[str, str]]]:
    """Returns (format, vertex_count, [(type, name), ...]) for the vertex element."""
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("truncated PLY header (no end_header)")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment"):
            continue
        if line == "end_header":
            break
        tokens = line.split()
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format '{line}'")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise PlyError(f"malformed element declaration '{line}'")
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PlyError("property declared before any element")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[-1]))
            else:
                elements[-1][2].append((tokens[1], tokens[2]))
    if fmt is None:
        raise PlyError("PLY header missing format declaration")
    if not elements or elements[0][0] != "vertex":
        raise PlyError("unsupported PLY element layout (vertex must be the first element)")
    name, count, props = elements[0]
    if count < 1:
        raise PlyError("vertex element is empty")
    return fmt, count, props


def _vertex_layout(props: list[tuple[str, str]]) -> bool:
    """Validate the property list; returns True when RGB columns are present."""
    names = [p[1] for p in props]
    if names[:3] != ["x", "y", "z"] or any(t not in _COORD_TYPES for t, _ in props[:3]):
        raise PlyError(f"unsupported vertex properties {names} (need float x, y, z first)")
    if len(props) == 3:
        return False
    if len(props) == 6 and names[3:] == ["red", "green", "blue"] \
            and all(t in _COLOR_TYPES for t, _ in props[3:]):
        return True
    raise PlyError(f"unsupported vertex properties {names}")


def read_cloud(path: str | Path) -> PointCloud:
    """Read a PLY file written by :func:`write_cloud` (or an equivalent layout).

    Colors come back rescaled from uchar to [0, 1].  Raises :class:`PlyError`
    on anything unsupported, truncated, or non-finite.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, count, props = _parse_ply_header(fh)
        has_rgb = _vertex_layout(props)
        coord_types = {t for t, _ in props[:3]}
        if fmt == "ascii":
            ncols = 6 if has_rgb else 3
            rows = np.empty((count, ncols), dtype=np.float64)
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise PlyError(f"truncated PLY data (expected {count} vertices, got {i})")
                parts = line.split()
                if len(parts) != ncols:
                    raise PlyError(f"vertex row {i} has {len(parts)} values, expected {ncols}")
                try:
                    rows[i] = [float(v) for v in parts]
                except ValueError as exc:
                    raise PlyError(f"vertex row {i} is not numeric") from exc
            pts = rows[:, :3]
            if not coord_types & {"double", "float64"}:
                # declared 32-bit: land on the same values a binary read gives
                pts = pts.astype(np.float32).astype(np.float64)
            cols = rows[:, 3:] / 255.0 if has_rgb else None
        else:
            fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
            if coord_types & {"double", "float64"}:
                fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_rgb:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            row = np.dtype(fields)
            raw = fh.read(count * row.itemsize)
            if len(raw) < count * row.itemsize:
                raise PlyError(f"truncated PLY data ({len(raw)} bytes, expected {count * row.itemsize})")
            rec = np.frombuffer(raw, dtype=row)
            pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
            cols = None
            if has_rgb:
                cols = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1) / 255.0
    if not np.isfinite(pts).all():
        raise PlyError("PLY file contains non-finite coordinates")
    return PointCloud(pts, cols)


# ---------------------------------------------------------------------------
# Dataset: <root>/objects/<id>.ply plus <root>/captions.jsonl with one
# {"id": ..., "caption": ...} record per line.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetEntry:
    id: str
    path: Path
    caption: str


@dataclass
class DatasetIndex:
    """Index over a captioned point-cloud dataset, in captions-file order.

    Clouds load lazily through :meth:`get` and stay cached; the cache is an
    in-process convenience only and is excluded from comparisons.
    """

    root: Path
    entries: list[DatasetEntry]
    _by_id: dict[str, DatasetEntry] = field(default_factory=dict, repr=False, compare=False)
    _cache: dict[str, CaptionedObject] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._by_id = {e.id: e for e in self.entries}

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[DatasetEntry]:
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def get(self, object_id: str) -> CaptionedObject:
        """Load (and cache) one object by id."""
        cached = self._cache.get(object_id)
        if cached is not None:
            return cached
        entry = self._by_id.get(object_id)
        if entry is None:
            raise KeyError(f"unknown object id '{object_id}'")
        obj = CaptionedObject(entry.id, read_cloud(entry.path), entry.caption)
        self._cache[object_id] = obj
        return obj

    def at(self, position: int) -> CaptionedObject:
        return self.get(self.entries[position].id)


def load_dataset(root: str | Path) -> DatasetIndex:
    """Build a :class:`DatasetIndex` from the on-disk layout.

    Every caption line must reference an existing ``objects/<id>.ply`` file;
    duplicate ids, malformed JSON lines, and an empty caption list are errors.
    """
    root = Path(root)
    captions_path = root / "captions.jsonl"
    objects_dir = root / "objects"
    if not captions_path.is_file():
        raise DatasetError(f"missing captions file {captions_path}")
    entries: list[DatasetEntry] = []
    seen: set[str] = set()
    with open(captions_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"captions.jsonl line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "id" not in rec or "caption" not in rec:
                raise DatasetError(f"captions.jsonl line {lineno}: record needs 'id' and 'caption'")
            object_id = rec["id"]
            caption = rec["caption"]
            if not isinstance(object_id, str) or not object_id or "/" in object_id or "\\" in object_id:
                raise DatasetError(f"captions.jsonl line {lineno}: invalid id {object_id!r}")
            if not isinstance(caption, str) or not caption.strip():
                raise DatasetError(f"captions.jsonl line {lineno}: empty caption for id '{object_id}'")
            if object_id in seen:
                raise DuplicateIdError(f"duplicate object id '{object_id}' (captions.jsonl line {lineno})")
            seen.add(object_id)
            cloud_path = objects_dir / f"{object_id}.ply"
            if not cloud_path.is_file():
                raise DatasetError(f"caption id '{object_id}' has no cloud file at {cloud_path}")
            entries.append(DatasetEntry(object_id, cloud_path, caption.strip()))
    if not entries:
        raise EmptyDatasetError(f"dataset at {root} lists no objects")
    return DatasetIndex(root=root, entries=entries)
