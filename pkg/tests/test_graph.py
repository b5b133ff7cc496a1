import io

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from eventgraph.events import EventStream
from eventgraph.graph import (
    EventGraph,
    VoxelParams,
    build_graph,
    build_point_graph,
    compute_features,
    graph_from_json,
    graph_to_json,
    normalize_time,
    read_graph,
    select_vertices,
    voxelize,
    write_graph,
)
from oracles import graph_bruteforce, select_bruteforce
from strategies import event_streams, voxel_params

BELOW_ONE = np.nextafter(1.0, 0.0)


def stream_at(times, width=64, height=64, xs=None, ys=None, ps=None):
    n = len(times)
    return EventStream(xs or [0] * n, ys or [0] * n, times, ps or [1] * n, width, height)


def test_normalize_examples():
    assert normalize_time(stream_at([0, 50, 100]), 8).tolist() == [0, 4.0, 8.0]
    assert normalize_time(stream_at([7, 7]), 8).tolist() == [0, 0]
    assert normalize_time(stream_at([10, 20]), 8).tolist() == [0, 8.0]


def test_normalize_empty_raises():
    with pytest.raises(ValueError):
        normalize_time(EventStream.empty(4, 4), 8)


def test_voxelize_example():
    s = stream_at([0, 1], xs=[3, 0], ys=[7, 0])
    vox = voxelize(s, VoxelParams(2, 2, 1.0, 8.0, 10), t_norm=np.array([2.5, 0.0]))
    assert tuple(vox.voxel[0]) == (1, 3, 2)
    assert (vox.local_x[0], vox.local_y[0], vox.t_in[0]) == (1, 1, 0.5)


def test_voxelize_clamps_last_slice():
    vox = voxelize(stream_at([0, 100]), VoxelParams(2, 2, 1.0, 8.0, 10))
    assert vox.voxel[1, 2] == 7
    assert vox.t_in[1] == BELOW_ONE


def test_voxelize_empty():
    assert voxelize(EventStream.empty(4, 4), VoxelParams()).groups() == {}


def test_select_tie_break():
    a, b, c, d = (0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0)
    # b < c in (t, x, y) order
    assert select_vertices({a: 5, b: 3, c: 3, d: 1}, 2) == [a, b]


def test_select_clamps_to_available():
    counts = {(i, 0, 0): i + 1 for i in range(4)}
    assert len(select_vertices(counts, 10)) == 4


@given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), st.integers(1, 6), max_size=60), st.integers(1, 20))
def test_select_matches_full_sort(counts, n_points):
    assert select_vertices(counts, n_points) == select_bruteforce(counts, n_points)


def test_features_examples():
    assert np.allclose(compute_features([(0, 0, 1.0, 1)], 2, 2), [BELOW_ONE, 0, 0, 0])
    assert compute_features([(0, 0, 0.5, 1), (1, 1, 0.25, -1)], 2, 2).tolist() == [0.5, 0, 0, -0.25]
    assert compute_features([(0, 0, 0.5, 1), (0, 0, 0.5, -1)], 2, 2).tolist() == [0, 0, 0, 0]


def test_features_row_major():
    assert compute_features([(1, 0, 0.5, 1)], 2, 3).tolist() == [0, 0, 0, 0.5, 0, 0]


def test_single_voxel_graph():
    s = stream_at([0, 5, 9, 10], xs=[0, 1, 0, 1], ys=[1, 0, 0, 1])
    g = build_graph(s, VoxelParams(2, 2, 8.0, 8.0, 4))
    assert len(g) == 1 and g.counts.tolist() == [4]


def test_build_graph_empty_raises():
    with pytest.raises(ValueError):
        build_graph(EventStream.empty(4, 4), VoxelParams())


@given(event_streams(), voxel_params())
def test_graph_matches_bruteforce(stream, params):
    g = build_graph(stream, params)
    coords, counts, feats = graph_bruteforce(stream, params.v_h, params.v_w, params.v_a, params.A, params.n_points)
    assert np.array_equal(g.coords, coords)
    assert np.array_equal(g.counts, counts)
    assert np.allclose(g.features, feats.astype(np.float32), atol=1e-5)


@given(event_streams(), voxel_params())
def test_graph_invariants(stream, params):
    g = build_graph(stream, params)
    vox = voxelize(stream, params)
    groups = vox.groups()
    # conservation: voxelize partitions the events
    assert sum(len(v) for v in groups.values()) == len(stream)
    assert all(0 <= t < 1 for v in groups.values() for _, _, t, _ in v)
    total = g.counts.sum()
    assert total <= len(stream)
    assert (total == len(stream)) == (len(groups) <= params.n_points)
    assert len({tuple(c) for c in g.coords}) == len(g)
    gx, gy, gt = params.grid_shape(stream.width, stream.height)
    assert np.all(g.coords >= 0)
    assert np.all(g.coords[:, 0] < gx) and np.all(g.coords[:, 1] < gy) and np.all(g.coords[:, 2] < gt)
    assert np.all(np.abs(g.features).max(axis=1) <= g.counts)
    assert g.feature_dim == params.feature_dim
    assert build_graph(stream, params) == g


@given(event_streams(min_len=2, max_len=200, max_side=12), st.integers(1, 10), st.data())
def test_isolated_event_is_filtered(stream, n_points, data):
    params = VoxelParams(2, 2, 1.0, 8.0, n_points)
    doubled = EventStream(
        np.repeat(stream.x, 2), np.repeat(stream.y, 2), np.repeat(stream.t, 2), np.repeat(stream.p, 2), stream.width, stream.height
    )
    base = build_graph(doubled, params)
    groups = voxelize(doubled, params).groups()
    if len(groups) < n_points:
        return
    # one extra event inside the existing time range, in a voxel of its own
    gx, gy, _ = params.grid_shape(stream.width, stream.height)
    t0, t1 = int(doubled.t[0]), int(doubled.t[-1])
    t = data.draw(st.integers(t0, t1))
    extra_x, extra_y = data.draw(st.integers(0, stream.width - 1)), data.draw(st.integers(0, stream.height - 1))
    t_norm = 0.0 if t1 == t0 else (t - t0) * 8.0 / (t1 - t0)
    assume((extra_x // 2, extra_y // 2, min(int(t_norm), 7)) not in groups)
    i = int(np.searchsorted(doubled.t, t, side="right"))
    noisy = EventStream(
        np.insert(doubled.x, i, extra_x), np.insert(doubled.y, i, extra_y), np.insert(doubled.t, i, t), np.insert(doubled.p, i, 1),
        stream.width, stream.height,
    )
    assert {tuple(c) for c in build_graph(noisy, params).coords} == {tuple(c) for c in base.coords}


def test_point_graph_takes_all_events_when_budget_large():
    s = stream_at([0, 10, 20], xs=[1, 2, 3], ys=[4, 5, 6], ps=[1, -1, 1])
    g = build_point_graph(s, VoxelParams(n_points=10), seed=0)
    assert len(g) == 3 and g.feature_dim == 1
    assert g.features[:, 0].tolist() == [1, -1, 1]
    assert g.coords.tolist() == [[1, 4, 0], [2, 5, 4], [3, 6, 7]]


@given(event_streams(), st.integers(1, 50), st.integers(0, 1000))
def test_point_graph_subset_and_determinism(stream, n_points, seed):
    params = VoxelParams(n_points=n_points)
    g = build_point_graph(stream, params, seed)
    assert g == build_point_graph(stream, params, seed)
    assert len(g) == min(n_points, len(stream))
    events = {}
    tn = normalize_time(stream, params.A)
    for x, y, t, p in zip(stream.x.tolist(), stream.y.tolist(), np.minimum(np.floor(tn), 7).astype(int).tolist(), stream.p.tolist()):
        events[(x, y, t, p)] = events.get((x, y, t, p), 0) + 1
    for (x, y, t), p in zip(g.coords.tolist(), g.features[:, 0].tolist()):
        key = (x, y, t, int(p))
        assert events.get(key, 0) > 0
        events[key] -= 1


@given(event_streams(), voxel_params(), st.one_of(st.none(), st.integers(0, 100)))
def test_evgr_round_trip(stream, params, label):
    g = build_graph(stream, params, label)
    assert read_graph(write_graph(g)) == g
    buf = io.BytesIO()
    write_graph(g, buf)
    assert read_graph(buf.getvalue()) == g
    assert graph_from_json(graph_to_json(g)) == g


def test_evgr_layout():
    g = EventGraph(np.array([[1, 2, 3]]), np.array([[0.5, -0.25]], dtype=np.float32), np.array([7]), VoxelParams(1, 2, 1.0, 8.0, 4), 5)
    raw = write_graph(g)
    assert raw[:5] == b"EVGR\x01"
    # header: n, D, v_h, v_w (u32), v_a, A (f64), n_points u32, mode u8, label i32
    assert len(raw) == 5 + 4 * 4 + 8 * 2 + 4 + 1 + 4 + (6 + 4 + 8)
    assert raw[-18:] == np.array([1, 2, 3], "<u2").tobytes() + np.array([7], "<u4").tobytes() + np.array([0.5, -0.25], "<f4").tobytes()


def test_evgr_rejects_garbage():
    with pytest.raises(ValueError):
        read_graph(b"NOPE\x01")
    raw = write_graph(build_graph(stream_at([0, 1]), VoxelParams()))
    with pytest.raises(ValueError):
        read_graph(raw[:-1])
