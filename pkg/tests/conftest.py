"""Shared fixtures: one small generated dataset reused across the suite."""

import pytest

from scenemix import SceneComposer, gen_primitives, load_dataset


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("primitives")
    gen_primitives(root, count_per_class=4, seed=0, points_per_object=256)
    return root


@pytest.fixture(scope="session")
def dataset(data_root):
    return load_dataset(data_root)


@pytest.fixture()
def composer():
    return SceneComposer()
