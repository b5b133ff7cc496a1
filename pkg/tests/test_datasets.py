import numpy as np
import pytest

from eventgraph.datasets import CLASSES, ShapeDatasetConfig, make_split, read_manifest, to_graphs, write_manifest
from eventgraph.graph import VoxelParams

SMALL = ShapeDatasetConfig(width=48, height=48, duration=20_000, size_min=14, size_max=18, n_train=9, n_test=6, position_jitter=4.0)


@pytest.fixture(scope="module")
def train_split():
    return make_split(SMALL, "train")


def test_balanced_labels(train_split):
    labels = [s.label for s in train_split]
    assert sorted(labels) == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    assert all(s.scene.shapes[0].kind == CLASSES[s.label] for s in train_split)


def test_split_is_deterministic(train_split):
    again = make_split(SMALL, "train")
    assert all(np.array_equal(a.stream.t, b.stream.t) and a.label == b.label for a, b in zip(train_split, again))


def test_train_and_test_differ(train_split):
    test = make_split(SMALL, "test")
    assert len(test) == 6
    assert not np.array_equal(train_split[0].stream.x, test[0].stream.x)


def test_start_positions_respect_jitter(train_split):
    for s in train_split:
        cx, cy = s.scene.shapes[0].position
        assert abs(cx - 24) <= 4 and abs(cy - 24) <= 4


def test_unbounded_positions_fit_frame():
    cfg = ShapeDatasetConfig(width=48, height=48, duration=5_000, size_min=14, size_max=18, n_train=6, n_test=0, position_jitter=None)
    for s in make_split(cfg, "train"):
        s.scene.validate()


def test_invalid_config():
    with pytest.raises(ValueError):
        ShapeDatasetConfig(size_min=5, size_max=4)
    with pytest.raises(ValueError):
        ShapeDatasetConfig(n_train=-1)


def test_graph_modes(train_split):
    params = VoxelParams(2, 2, 1.0, 8.0, 32)
    voxel = to_graphs(train_split[:2], params)
    point = to_graphs(train_split[:2], params, mode="point")
    assert voxel[0].feature_dim == 4 and point[0].feature_dim == 1
    assert [g.label for g in voxel] == [s.label for s in train_split[:2]]
    with pytest.raises(ValueError):
        to_graphs(train_split[:1], params, mode="mesh")


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "labels.csv"
    write_manifest([("a.csv", 0), ("sub/b.csv", 2)], str(path))
    assert read_manifest(str(path)) == [(str(tmp_path / "a.csv"), 0), (str(tmp_path / "sub/b.csv"), 2)]


@pytest.mark.parametrize(
    "text, message",
    [("file,label\n", "header"), ("path,label\na.csv\n", "malformed line 2"), ("path,label\na.csv,x\n", "bad label at line 2")],
)
def test_manifest_errors(tmp_path, text, message):
    path = tmp_path / "labels.csv"
    path.write_text(text)
    with pytest.raises(ValueError, match=message):
        read_manifest(str(path))
