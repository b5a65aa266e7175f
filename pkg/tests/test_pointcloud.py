"""Cloud value types, PLY round-trips, and the dataset loader."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scenemix import (PlyError, PointCloud, concat, load_dataset,
                      normalize_unit_sphere, read_cloud, subsample, translate,
                      write_cloud)
from scenemix.pointcloud import (DatasetError, DuplicateIdError, EmptyDatasetError,
                                 farthest_point_indices, subsample_indices)

CUBE_CORNERS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                        dtype=float)


def cloud_of(*rows, colors=None):
    return PointCloud(np.array(rows, dtype=float), colors)


finite_points = st.lists(
    st.tuples(*[st.floats(-100, 100, allow_nan=False) for _ in range(3)]),
    min_size=1, max_size=40,
).map(lambda rows: np.array(rows, dtype=float))


class TestPointCloud:
    def test_backing_arrays_are_read_only(self):
        c = cloud_of([0, 0, 0], [1, 2, 3])
        with pytest.raises(ValueError):
            c.points[0, 0] = 9.0

    def test_rejects_wrong_shapes(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.nan]]))

    def test_colors_validated_and_aligned(self):
        with pytest.raises(ValueError):
            cloud_of([0, 0, 0], colors=np.array([[0.0, 0.0, 1.5]]))
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), colors=np.zeros((3, 3)))
        c = PointCloud(np.zeros((2, 3)), colors=np.full((2, 3), 0.25))
        assert c.colors.shape == (2, 3)

    def test_take_carries_colors_and_allows_repeats(self):
        c = PointCloud(np.arange(9, dtype=float).reshape(3, 3) / 10.0,
                       colors=np.eye(3) * 0.5)
        picked = c.take(np.array([2, 2, 0]))
        assert len(picked) == 3
        np.testing.assert_array_equal(picked.points[0], picked.points[1])
        np.testing.assert_array_equal(picked.colors[2], c.colors[0])

    def test_with_points_keeps_count(self):
        c = cloud_of([0, 0, 0], [1, 1, 1])
        with pytest.raises(ValueError):
            c.with_points(np.zeros((3, 3)))


def test_translate_adds_offset_exactly():
    c = cloud_of([1, 2, 3], [-1, 0, 1])
    moved = translate(c, np.array([10.0, -2.0, 0.5]))
    np.testing.assert_array_equal(moved.points, [[11, 0, 3.5], [9, -2, 1.5]])


def test_concat_orders_points_and_drops_partial_colors():
    a = PointCloud(np.zeros((2, 3)), colors=np.zeros((2, 3)))
    b = cloud_of([1, 1, 1])
    merged = concat([a, b])
    assert len(merged) == 3
    assert merged.colors is None  # one input without colors poisons the lot
    both = concat([a, a])
    assert both.colors.shape == (4, 3)


class TestNormalize:
    def test_cube_corner_lands_on_unit_diagonal(self):
        got = normalize_unit_sphere(PointCloud(CUBE_CORNERS))
        # corner (1,1,1) / sqrt(3), computed independently
        np.testing.assert_allclose(got.points[-1], [0.5773502691896258] * 3, atol=1e-12)

    def test_degenerate_cloud_maps_to_zeros(self):
        c = cloud_of([5, 5, 5], [5, 5, 5])
        np.testing.assert_array_equal(normalize_unit_sphere(c).points, np.zeros((2, 3)))

    @given(finite_points)
    def test_centered_with_max_radius_one(self, pts):
        out = normalize_unit_sphere(PointCloud(pts)).points
        radii = np.linalg.norm(out, axis=1)
        if radii.max() > 0:
            assert radii.max() == pytest.approx(1.0, abs=1e-9)
            np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        c = PointCloud(rng.normal(size=(50, 3)) * 4 + 2)
        once = normalize_unit_sphere(c)
        twice = normalize_unit_sphere(once)
        np.testing.assert_allclose(twice.points, once.points, atol=1e-12)


class TestSubsample:
    @given(st.integers(1, 200), st.integers(1, 200), st.integers(0, 10))
    def test_indices_hit_the_budget(self, n, target, seed):
        idx = subsample_indices(n, target, np.random.default_rng(seed))
        assert len(idx) == target
        assert idx.min() >= 0 and idx.max() < n
        if n >= target:
            assert len(np.unique(idx)) == target  # without replacement
        else:
            # every original point survives; only the top-up repeats
            assert set(range(n)) <= set(idx.tolist())

    def test_downsample_is_a_subset(self):
        rng = np.random.default_rng(0)
        c = PointCloud(rng.normal(size=(30, 3)))
        out = subsample(c, 10, rng)
        rows = {tuple(r) for r in c.points}
        assert all(tuple(r) in rows for r in out.points)

    def test_fps_covers_extremes(self):
        line = np.zeros((10, 3))
        line[:, 0] = np.arange(10, dtype=float)
        idx = farthest_point_indices(line, 3, np.random.default_rng(1))
        # whatever the random start, both endpoints are max-min optimal picks
        assert {0, 9} <= set(idx.tolist())

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown subsample method"):
            subsample(cloud_of([0, 0, 0]), 1, np.random.default_rng(0), method="grid")


class TestPly:
    def test_binary_bytes_match_struct_oracle(self, tmp_path):
        c = cloud_of([1.5, -2.25, 3.0], [0.1, 0.2, 0.3])
        path = tmp_path / "c.ply"
        write_cloud(path, c)
        header = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n" \
                 b"property float x\nproperty float y\nproperty float z\nend_header\n"
        body = struct.pack("<3f", 1.5, -2.25, 3.0) + struct.pack("<3f", 0.1, 0.2, 0.3)
        assert path.read_bytes() == header + body

    def test_write_is_byte_deterministic(self, tmp_path):
        rng = np.random.default_rng(5)
        c = PointCloud(rng.normal(size=(64, 3)), colors=rng.random((64, 3)))
        write_cloud(tmp_path / "a.ply", c)
        write_cloud(tmp_path / "b.ply", c)
        assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()

    @pytest.mark.parametrize("fmt", ["binary", "ascii"])
    @pytest.mark.parametrize("with_colors", [False, True])
    def test_round_trip(self, tmp_path, fmt, with_colors):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(20, 3))
        cols = rng.random((20, 3)) if with_colors else None
        path = tmp_path / "c.ply"
        write_cloud(path, PointCloud(pts, cols), fmt=fmt)
        back = read_cloud(path)
        # disk stores float32 coordinates and 8-bit colors
        np.testing.assert_array_equal(back.points, pts.astype(np.float32).astype(np.float64))
        if with_colors:
            np.testing.assert_array_equal(
                back.colors, np.clip(np.rint(cols * 255), 0, 255) / 255.0)
        else:
            assert back.colors is None

    def test_ascii_and_binary_agree(self, tmp_path):
        c = PointCloud(np.random.default_rng(11).normal(size=(15, 3)))
        write_cloud(tmp_path / "a.ply", c, fmt="ascii")
        write_cloud(tmp_path / "b.ply", c, fmt="binary")
        np.testing.assert_array_equal(read_cloud(tmp_path / "a.ply").points,
                                      read_cloud(tmp_path / "b.ply").points)

    def test_reads_double_precision_coordinates(self, tmp_path):
        path = tmp_path / "d.ply"
        header = ("ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                  "property double x\nproperty double y\nproperty double z\nend_header\n")
        path.write_bytes(header.encode() + struct.pack("<3d", 0.1, 0.2, 0.3))
        np.testing.assert_allclose(read_cloud(path).points, [[0.1, 0.2, 0.3]], atol=0)

    def test_truncated_body_is_an_error(self, tmp_path):
        c = PointCloud(np.zeros((4, 3)))
        path = tmp_path / "t.ply"
        write_cloud(path, c)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(PlyError, match="truncated"):
            read_cloud(path)

    def test_bad_magic_and_layouts(self, tmp_path):
        bad = tmp_path / "x.ply"
        bad.write_bytes(b"obj\n")
        with pytest.raises(PlyError, match="magic"):
            read_cloud(bad)
        weird = tmp_path / "y.ply"
        weird.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                          b"property float nx\nproperty float y\nproperty float z\n"
                          b"end_header\n0 0 0\n")
        with pytest.raises(PlyError, match="unsupported vertex properties"):
            read_cloud(weird)

    def test_non_finite_payload_rejected(self, tmp_path):
        path = tmp_path / "n.ply"
        path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\n"
                         b"property float x\nproperty float y\nproperty float z\n"
                         b"end_header\nnan 0 0\n")
        with pytest.raises(PlyError, match="non-finite"):
            read_cloud(path)


def _write_dataset(root, records, clouds=None):
    (root / "objects").mkdir(parents=True, exist_ok=True)
    with open(root / "captions.jsonl", "w") as fh:
        for rec in records:
            fh.write(rec if isinstance(rec, str) else json.dumps(rec))
            fh.write("\n")
    for object_id in clouds or []:
        write_cloud(root / "objects" / f"{object_id}.ply",
                    PointCloud(np.random.default_rng(0).normal(size=(8, 3))))


class TestLoadDataset:
    def test_preserves_caption_file_order(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "b", "caption": "a b thing"},
                                  {"id": "a", "caption": "another thing"}],
                       clouds=["a", "b"])
        index = load_dataset(tmp_path)
        assert index.ids == ["b", "a"]
        assert index.at(0).id == "b"
        assert index.get("a").caption == "another thing"

    def test_get_caches_loaded_objects(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "a", "caption": "a thing"}], clouds=["a"])
        index = load_dataset(tmp_path)
        assert index.get("a") is index.get("a")

    def test_duplicate_id_names_the_line(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "a", "caption": "x y"},
                                  {"id": "a", "caption": "z w"}], clouds=["a"])
        with pytest.raises(DuplicateIdError, match="line 2"):
            load_dataset(tmp_path)

    def test_invalid_json_names_the_line(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "a", "caption": "x"}, "{not json"], clouds=["a"])
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(tmp_path)

    def test_missing_cloud_file(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "ghost", "caption": "nope"}], clouds=[])
        with pytest.raises(DatasetError, match="ghost"):
            load_dataset(tmp_path)

    def test_path_traversal_ids_rejected(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "../evil", "caption": "x"}], clouds=[])
        with pytest.raises(DatasetError, match="invalid id"):
            load_dataset(tmp_path)

    def test_empty_dataset(self, tmp_path):
        _write_dataset(tmp_path, [], clouds=[])
        with pytest.raises(EmptyDatasetError):
            load_dataset(tmp_path)

    def test_unknown_id_lookup(self, tmp_path):
        _write_dataset(tmp_path, [{"id": "a", "caption": "x"}], clouds=["a"])
        with pytest.raises(KeyError):
            load_dataset(tmp_path).get("zzz")
