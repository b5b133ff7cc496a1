"""Voxel-wise and point-wise event graphs.

A voxel graph keeps the ``n_points`` most populated voxels of the normalized
x-y-t volume. Each vertex carries its integer voxel coordinate and a
``v_h * v_w`` feature: the per-pixel sum of polarity times local temporal
offset of the events inside the voxel.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO, Mapping, NamedTuple

import numpy as np

from .events import EventStream

_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class VoxelParams:
    v_h: int = 5
    v_w: int = 5
    v_a: float = 3.0
    A: float = 8.0
    n_points: int = 2048

    def __post_init__(self):
        if int(self.v_h) != self.v_h or int(self.v_w) != self.v_w or self.v_h < 1 or self.v_w < 1:
            raise ValueError("voxel spatial extents must be integers >= 1")
        if self.v_a <= 0 or self.A <= 0:
            raise ValueError("v_a and A must be positive")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    @property
    def feature_dim(self) -> int:
        return self.v_h * self.v_w

    def grid_shape(self, width: int, height: int) -> tuple[int, int, int]:
        return (
            math.ceil(width / self.v_h),
            math.ceil(height / self.v_w),
            math.ceil(self.A / self.v_a),
        )


class Vertex(NamedTuple):
    coord: tuple[int, int, int]
    feature: np.ndarray
    count: int


@dataclass(eq=False)
class EventGraph:
    """Vertices as parallel arrays: ``coords [n, 3]``, ``features [n, D]`` (float32), ``counts [n]``.

    ``mode`` is ``"voxel"`` or ``"point"``.
    """

    coords: np.ndarray
    features: np.ndarray
    counts: np.ndarray
    params: VoxelParams
    label: int | None = None
    mode: str = "voxel"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        self.features = np.asarray(self.features, dtype=np.float32)
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2 or len(self.features) != len(self.coords) or len(self.counts) != len(self.coords):
            raise ValueError("graph arrays disagree on vertex count")

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def vertices(self) -> list[Vertex]:
        return [Vertex(tuple(int(c) for c in self.coords[i]), self.features[i], int(self.counts[i])) for i in range(len(self))]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventGraph):
            return NotImplemented
        return (
            self.params == other.params
            and self.label == other.label
            and self.mode == other.mode
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.counts, other.counts)
        )

    def with_label(self, label: int | None) -> "EventGraph":
        return EventGraph(self.coords, self.features, self.counts, self.params, label, self.mode)


# construction steps


def normalize_time(stream: EventStream, A: float) -> np.ndarray:
    """Map timestamps affinely onto [0, A]; a zero-length time range maps to 0."""
    if len(stream) == 0:
        raise ValueError("cannot normalize an empty stream")
    t = stream.t.astype(np.float64)
    t0, t1 = t[0], t[-1]
    if t1 == t0:
        return np.zeros_like(t)
    return (t - t0) * A / (t1 - t0)


@dataclass
class Voxelization:
    """Per-event voxel indices and local coordinates, plus the polarity."""

    voxel: np.ndarray  # [N, 3] int
    local_x: np.ndarray
    local_y: np.ndarray
    t_in: np.ndarray
    p: np.ndarray
    grid: tuple[int, int, int]

    def groups(self) -> dict[tuple[int, int, int], list[tuple[int, int, float, int]]]:
        """Voxel coordinate -> list of ``(x_in, y_in, t_in, p)`` in stream order."""
        out: dict[tuple[int, int, int], list] = {}
        for i in range(len(self.voxel)):
            key = (int(self.voxel[i, 0]), int(self.voxel[i, 1]), int(self.voxel[i, 2]))
            out.setdefault(key, []).append(
                (int(self.local_x[i]), int(self.local_y[i]), float(self.t_in[i]), int(self.p[i]))
            )
        return out


def voxelize(stream: EventStream, params: VoxelParams, t_norm: np.ndarray | None = None) -> Voxelization:
    """Assign every event to a voxel; ``t_norm`` defaults to :func:`normalize_time`."""
    grid = params.grid_shape(stream.width, stream.height)
    if len(stream) == 0:
        z = np.zeros(0, dtype=np.int64)
        return Voxelization(np.zeros((0, 3), dtype=np.int64), z, z, np.zeros(0), z, grid)
    if t_norm is None:
        t_norm = normalize_time(stream, params.A)
    xv = stream.x // params.v_h
    yv = stream.y // params.v_w
    tv = np.minimum(np.floor(t_norm / params.v_a).astype(np.int64), grid[2] - 1)
    t_in = np.minimum((t_norm - tv * params.v_a) / params.v_a, _BELOW_ONE)
    return Voxelization(
        np.stack([xv, yv, tv], axis=1),
        stream.x - xv * params.v_h,
        stream.y - yv * params.v_w,
        t_in,
        stream.p.copy(),
        grid,
    )


def select_vertices(counts: Mapping[tuple[int, int, int], int], n_points: int) -> list[tuple[int, int, int]]:
    """Top ``n_points`` voxels by event count; ties by ascending ``(t_v, x_v, y_v)``."""
    def key(item):
        (x, y, t), c = item
        return (-c, t, x, y)

    sized = ((k, int(v) if isinstance(v, (int, np.integer)) else len(v)) for k, v in counts.items())
    ranked = sorted((item for item in sized if item[1] > 0), key=key)
    return [k for k, _ in ranked[:n_points]]


def compute_features(events, v_h: int, v_w: int) -> np.ndarray:
    """Sum ``p * t_in`` per local pixel of one voxel, flattened row-major over (x_in, y_in).

    ``events`` is a sequence of ``(x_in, y_in, t_in, p)``.
    """
    feat = np.zeros(v_h * v_w, dtype=np.float64)
    for x_in, y_in, t_in, p in events:
        feat[int(x_in) * v_w + int(y_in)] += p * min(float(t_in), _BELOW_ONE)
    return feat


def build_graph(stream: EventStream, params: VoxelParams, label: int | None = None) -> EventGraph:
    """Normalize, voxelize, keep the densest voxels and integrate their features."""
    if len(stream) == 0:
        raise ValueError("cannot build a graph from an empty stream")
    vox = voxelize(stream, params)
    gx, gy, gt = vox.grid
    key = (vox.voxel[:, 2] * gx + vox.voxel[:, 0]) * gy + vox.voxel[:, 1]
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    # uniq is ascending in (t_v, x_v, y_v); a stable sort on -count keeps that tie order
    order = np.argsort(-counts, kind="stable")[: params.n_points]
    chosen = uniq[order]
    rank = np.full(len(uniq), -1, dtype=np.int64)
    rank[order] = np.arange(len(order))

    tv, rest = np.divmod(chosen, gx * gy)
    xv, yv = np.divmod(rest, gy)
    coords = np.stack([xv, yv, tv], axis=1)

    vertex_of_event = rank[inverse]
    keep = vertex_of_event >= 0
    D = params.feature_dim
    feats = np.zeros((len(order), D), dtype=np.float64)
    cell = vox.local_x[keep] * params.v_w + vox.local_y[keep]
    np.add.at(feats, (vertex_of_event[keep], cell), vox.p[keep] * vox.t_in[keep])
    return EventGraph(coords, feats.astype(np.float32), counts[order], params, label, "voxel")


def build_point_graph(stream: EventStream, params: VoxelParams, seed: int, label: int | None = None) -> EventGraph:
    """Random subset of raw events as vertices with polarity as the only feature.

    Coordinates are ``(x, y, floor(t'))`` with ``t'`` the normalized timestamp
    clamped below ``A``, so they share the voxel graph's integer coordinate
    storage.
    """
    if len(stream) == 0:
        raise ValueError("cannot build a graph from an empty stream")
    rng = np.random.default_rng(seed)
    n = len(stream)
    k = min(params.n_points, n)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    t_norm = normalize_time(stream, params.A)
    t_slots = max(math.ceil(params.A) - 1, 0)
    tq = np.minimum(np.floor(t_norm[idx]).astype(np.int64), t_slots)
    coords = np.stack([stream.x[idx], stream.y[idx], tq], axis=1)
    feats = stream.p[idx].astype(np.float32)[:, None]
    return EventGraph(coords, feats, np.ones(k, dtype=np.int64), params, label, "point")


# serialization

GRAPH_MAGIC = b"EVGR"
GRAPH_VERSION = 1
_MODES = {"voxel": 0, "point": 1}
_HEADER = struct.Struct("<II" + "IIddIB" + "i")


def write_graph(graph: EventGraph, sink: BinaryIO | str | None = None) -> bytes | None:
    """Binary ``EVGR`` container; returns bytes when ``sink`` is None.

    Layout (little-endian): magic, version u8, vertex count u32, D u32,
    params (v_h u32, v_w u32, v_a f64, A f64, n_points u32, mode u8),
    label i32 (-1 = none), then per vertex 3 x u16 coords, u32 count, D x f32.
    """
    if len(graph) and (graph.coords.min() < 0 or graph.coords.max() > 0xFFFF):
        raise ValueError("vertex coordinates do not fit u16")
    p = graph.params
    buf = io.BytesIO()
    buf.write(GRAPH_MAGIC)
    buf.write(struct.pack("<B", GRAPH_VERSION))
    buf.write(
        _HEADER.pack(
            len(graph), graph.feature_dim, p.v_h, p.v_w, float(p.v_a), float(p.A), p.n_points,
            _MODES[graph.mode], -1 if graph.label is None else int(graph.label),
        )
    )
    rec = np.dtype([("coord", "<u2", 3), ("count", "<u4"), ("feat", "<f4", graph.feature_dim)])
    table = np.zeros(len(graph), dtype=rec)
    table["coord"] = graph.coords
    table["count"] = graph.counts
    table["feat"] = graph.features
    buf.write(table.tobytes())
    data = buf.getvalue()
    if sink is None:
        return data
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return None


def read_graph(source: BinaryIO | str | bytes) -> EventGraph:
    if isinstance(source, str):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if raw[:4] != GRAPH_MAGIC:
        raise ValueError("not an EVGR graph file")
    if raw[4] != GRAPH_VERSION:
        raise ValueError(f"unsupported EVGR version {raw[4]}")
    n, D, v_h, v_w, v_a, A, n_points, mode, label = _HEADER.unpack_from(raw, 5)
    rec = np.dtype([("coord", "<u2", 3), ("count", "<u4"), ("feat", "<f4", D)])
    body = raw[5 + _HEADER.size:]
    if len(body) != n * rec.itemsize:
        raise ValueError("EVGR body length does not match the header")
    table = np.frombuffer(body, dtype=rec, count=n)
    params = VoxelParams(v_h, v_w, v_a, A, n_points)
    modes = {v: k for k, v in _MODES.items()}
    return EventGraph(
        table["coord"].astype(np.int64),
        table["feat"].reshape(n, D).copy(),
        table["count"].astype(np.int64),
        params,
        None if label < 0 else label,
        modes[mode],
    )


def graph_to_json(graph: EventGraph) -> str:
    return json.dumps(
        {
            "mode": graph.mode,
            "params": asdict(graph.params),
            "label": graph.label,
            "feature_dim": graph.feature_dim,
            "vertices": [
                {"coord": [int(c) for c in graph.coords[i]], "count": int(graph.counts[i]), "feature": graph.features[i].tolist()}
                for i in range(len(graph))
            ],
        }
    )


def graph_from_json(text: str) -> EventGraph:
    obj = json.loads(text)
    D = obj["feature_dim"]
    verts = obj["vertices"]
    return EventGraph(
        np.array([v["coord"] for v in verts], dtype=np.int64).reshape(-1, 3),
        np.array([v["feature"] for v in verts], dtype=np.float32).reshape(-1, D),
        np.array([v["count"] for v in verts], dtype=np.int64),
        VoxelParams(**obj["params"]),
        obj["label"],
        obj["mode"],
    )
