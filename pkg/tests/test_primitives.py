"""Synthetic corpus generator: determinism, layout, caption honesty."""

import numpy as np
import pytest

from scenemix import SHAPES, gen_primitives


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenPrimitives:
    def test_layout_and_ids(self, tmp_path):
        index = gen_primitives(tmp_path / "d", count_per_class=2, seed=0,
                               points_per_object=128)
        assert len(index) == 2 * len(SHAPES)
        ids = [entry.id for entry in index.entries]
        assert ids == [f"{shape}_{i:04d}" for shape in SHAPES for i in range(2)]
        assert (tmp_path / "d" / "captions.jsonl").exists()
        for object_id in ids:
            assert (tmp_path / "d" / "objects" / f"{object_id}.ply").exists()

    def test_objects_have_requested_size_and_colors(self, tmp_path):
        index = gen_primitives(tmp_path / "d", count_per_class=1, seed=3,
                               points_per_object=256)
        for entry in index.entries:
            obj = index.get(entry.id)
            assert len(obj.cloud) == 256
            assert obj.cloud.colors is not None
            assert obj.cloud.colors.min() >= 0.0 and obj.cloud.colors.max() <= 1.0

    def test_same_seed_reproduces_every_byte(self, tmp_path):
        gen_primitives(tmp_path / "a", count_per_class=2, seed=7, points_per_object=128)
        gen_primitives(tmp_path / "b", count_per_class=2, seed=7, points_per_object=128)
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        gen_primitives(tmp_path / "a", count_per_class=1, seed=1, points_per_object=128)
        gen_primitives(tmp_path / "b", count_per_class=1, seed=2, points_per_object=128)
        assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")

    def test_captions_name_their_shape(self, tmp_path):
        index = gen_primitives(tmp_path / "d", count_per_class=3, seed=11,
                               points_per_object=128)
        for entry in index.entries:
            shape = entry.id.rsplit("_", 1)[0]
            assert shape in index.get(entry.id).caption

    def test_proportion_words_describe_the_geometry(self, tmp_path):
        # "tall" objects must actually be tall, flat/squat/thin ones must not
        index = gen_primitives(tmp_path / "d", count_per_class=6, seed=5,
                               points_per_object=256)
        checked = 0
        for entry in index.entries:
            obj = index.get(entry.id)
            extent = obj.cloud.points.max(axis=0) - obj.cloud.points.min(axis=0)
            ratio = extent[2] / max(extent[0], extent[1])
            words = set(obj.caption.replace(",", " ").split())
            if "tall" in words:
                assert ratio > 1.5, obj.caption
                checked += 1
            elif words & {"flat", "squat", "thin"}:
                assert ratio < 0.7, obj.caption
                checked += 1
        assert checked >= 5  # seed must exercise both kinds

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError, match="count_per_class"):
            gen_primitives(tmp_path / "d", count_per_class=0, seed=0)
        with pytest.raises(ValueError, match="points_per_object"):
            gen_primitives(tmp_path / "d", count_per_class=1, seed=0, points_per_object=32)
