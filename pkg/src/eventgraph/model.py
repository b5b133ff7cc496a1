"""Voxel-graph classifier: relational layers, random graph pooling and an MLP head.

A single graph flows through the backbone on its own; the head runs on the
stacked global descriptors of a whole batch so its batch-norm layers see one
row per graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .graph import EventGraph, VoxelParams
from .neighbor import NeighborTable, knn, split_adjacent_distant
from .nn import BatchNorm, Linear, Module
from .tensor import Tensor

NO_POOL_INPUT = 512  # inputs of exactly this many vertices skip pooling


@dataclass(frozen=True)
class SfrlConfig:
    n_neigh: int
    d_in: int
    d_out: int

    def __post_init__(self):
        if min(self.n_neigh, self.d_in, self.d_out) < 1:
            raise ValueError("SFRL sizes must be >= 1")


@dataclass(frozen=True)
class MfrlConfig:
    n_adj: int
    n_dis: int
    d_in: int
    d_out: int
    shortcut: str = "identity"

    def __post_init__(self):
        if self.n_adj < 1 or self.n_dis < 0:
            raise ValueError("need n_adj >= 1 and n_dis >= 0")
        if self.shortcut not in ("identity", "projection"):
            raise ValueError(f"unknown shortcut {self.shortcut!r}")
        if self.d_in != self.d_out and self.shortcut != "projection":
            raise ValueError("width change requires a projection shortcut")


@dataclass(frozen=True)
class ModelConfig:
    voxel: VoxelParams = field(default_factory=VoxelParams)
    graph_mode: str = "voxel"
    mfrl_mode: str = "mfrl"
    mfrl_widths: tuple[int, ...] = (64, 128, 256, 384)
    n_adj: int = 10
    n_dis: int = 15
    pool_sizes: tuple[int, ...] = (896, 768, 640)
    post_width: int = 512
    classifier_widths: tuple[int, ...] = (256, 128)
    num_classes: int = 101
    dropout: float = 0.5
    leaky_slope: float = 0.01
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "mfrl_widths", tuple(int(w) for w in self.mfrl_widths))
        object.__setattr__(self, "pool_sizes", tuple(int(w) for w in self.pool_sizes))
        object.__setattr__(self, "classifier_widths", tuple(int(w) for w in self.classifier_widths))
        if self.graph_mode not in ("voxel", "point"):
            raise ValueError(f"unknown graph mode {self.graph_mode!r}")
        if self.mfrl_mode not in ("mfrl", "sfrl"):
            raise ValueError(f"unknown relational mode {self.mfrl_mode!r}")
        if len(self.mfrl_widths) != 4:
            raise ValueError("exactly four relational layers are required")
        if len(self.classifier_widths) != 2:
            raise ValueError("the classifier has two hidden layers")
        if self.pool_sizes and len(self.pool_sizes) != 3:
            raise ValueError("pooling needs three sizes (or none)")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        chain = (self.voxel.n_points,) + (self.pool_sizes if self.pools_active else ())
        if any(a < b for a, b in zip(chain, chain[1:])) or chain[-1] < self.n_neigh_total:
            raise ValueError(f"need n_points >= pool sizes >= n_adj + n_dis, got {chain}")

    @property
    def n_neigh_total(self) -> int:
        return self.n_adj + self.n_dis

    @property
    def in_dim(self) -> int:
        return 1 if self.graph_mode == "point" else self.voxel.feature_dim

    @property
    def pools_active(self) -> bool:
        return bool(self.pool_sizes) and self.voxel.n_points != NO_POOL_INPUT

    @property
    def mfrl_pairs(self) -> list[tuple[int, int]]:
        dims = (self.in_dim,) + self.mfrl_widths
        return list(zip(dims[:-1], dims[1:]))

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class LinearBN(Module):
    """Linear map, batch norm, then an optional activation."""

    def __init__(self, d_in, d_out, rng, activation: str | None, cfg: ModelConfig):
        super().__init__()
        dtype = cfg.np_dtype
        self.linear = Linear(d_in, d_out, rng, dtype=dtype)
        self.bn = BatchNorm(d_out, cfg.bn_momentum, cfg.bn_eps, dtype=dtype)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = self.bn(self.linear(x))
        if self.activation == "relu":
            return T.relu(y)
        if self.activation == "tanh":
            return T.tanh(y)
        return y


def geometric_relations(coords: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``[n * k, 6]`` stack of ``[u_i, u_i - u_j]`` over neighbours ``j`` of each ``i``."""
    n, k = rows.shape
    centre = np.repeat(coords, k, axis=0)
    return np.concatenate([centre, centre - coords[rows.reshape(-1)]], axis=1)


class SFRL(Module):
    """Scores neighbours from geometry and sums their re-weighted features.

    ``fused`` selects the per-vertex evaluation; ``False`` runs the literal
    neighbour-stack computation (same values, more work).
    """

    fused = True

    def __init__(self, cfg: SfrlConfig, rng: np.random.Generator, model_cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.score = LinearBN(6, cfg.n_neigh, rng, "tanh", model_cfg)
        self.feat = LinearBN(cfg.d_in, cfg.d_out, rng, "relu", model_cfg)

    def scoring(self, coords: np.ndarray, rows: np.ndarray, relations: np.ndarray | None = None) -> Tensor:
        n, k = rows.shape
        if relations is None:
            relations = geometric_relations(coords, rows)
        g = Tensor(relations.astype(self.score.linear.weight.dtype, copy=False))
        return T.reshape(self.score(g), (n, k, k))

    def __call__(self, coords: np.ndarray, x: Tensor, rows: np.ndarray, relations: np.ndarray | None = None) -> Tensor:
        """``relations`` optionally supplies precomputed :func:`geometric_relations`."""
        n, k = rows.shape
        if k != self.cfg.n_neigh:
            raise ValueError(f"expected {self.cfg.n_neigh} neighbours per row, got {k}")
        if x.shape != (n, self.cfg.d_in) or coords.shape != (n, 3):
            raise ValueError(f"SFRL input shapes: coords {coords.shape}, features {x.shape}, rows {rows.shape}")
        scores = self.scoring(coords, rows, relations)
        if not self.fused:
            return self._stacked(scores, x, rows)
        # Every stacked copy of vertex j carries the same transformed row, so the
        # feature transform runs once per vertex with batch statistics weighted
        # by how often j appears as a neighbour. Summing M_i @ H_i over its rows
        # equals weighting neighbour b by the column sum of M_i.
        uses = np.bincount(rows.reshape(-1), minlength=n)
        h = T.relu(self.feat.bn(self.feat.linear(x), weights=uses))
        return T.neighbor_sum(T.reduce_sum(scores, axis=1), h, rows)

    def _stacked(self, scores: Tensor, x: Tensor, rows: np.ndarray) -> Tensor:
        """Reference evaluation on the explicit ``[n, k, d_out]`` neighbour stack."""
        n, k = rows.shape
        d_out = self.cfg.d_out
        h = self.feat.linear(x)
        stacked = T.reshape(T.gather_rows(h, rows), (n * k, d_out))
        stacked = T.relu(self.feat.bn(stacked))
        weighted = T.bmm(scores, T.reshape(stacked, (n, k, d_out)))
        return T.reduce_sum(weighted, axis=1)


class MFRL(Module):
    """Adjacent-neighbour SFRL + distant-neighbour SFRL + shortcut."""

    def __init__(self, cfg: MfrlConfig, rng: np.random.Generator, model_cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.sfrl_adj = SFRL(SfrlConfig(cfg.n_adj, cfg.d_in, cfg.d_out), rng, model_cfg)
        self.sfrl_dis = SFRL(SfrlConfig(cfg.n_dis, cfg.d_in, cfg.d_out), rng, model_cfg) if cfg.n_dis else None
        self.shortcut = Linear(cfg.d_in, cfg.d_out, rng, bias=False, dtype=model_cfg.np_dtype) if cfg.shortcut == "projection" else None

    def __call__(self, coords: np.ndarray, x: Tensor, rows: np.ndarray, cache: dict | None = None) -> Tensor:
        """``cache`` memoizes the split table and geometric relations for fixed ``rows``."""
        cache = {} if cache is None else cache
        key = ("split", self.cfg.n_adj, self.cfg.n_dis)
        if key not in cache:
            cache[key] = split_with_relations(coords, rows, self.cfg.n_adj, self.cfg.n_dis)
        table, rel_adj, rel_dis = cache[key]
        out = self.sfrl_adj(coords, x, table.adjacent, rel_adj)
        if self.sfrl_dis is not None:
            out = T.add(out, self.sfrl_dis(coords, x, table.distant, rel_dis))
        return T.add(out, x if self.shortcut is None else self.shortcut(x))


def split_with_relations(coords: np.ndarray, rows: np.ndarray, n_adj: int, n_dis: int):
    table = split_adjacent_distant(rows, n_adj, n_dis)
    return (
        table,
        geometric_relations(coords, table.adjacent),
        geometric_relations(coords, table.distant) if n_dis else None,
    )


def pool_indices(n: int, n_keep: int, rng: np.random.Generator) -> np.ndarray:
    """Ascending indices of a uniform random ``n_keep``-subset of ``range(n)``."""
    if n < n_keep:
        raise ValueError(f"cannot pool {n} vertices down to {n_keep}")
    return np.sort(rng.choice(n, size=n_keep, replace=False))


def graph_pool(coords: np.ndarray, features: Tensor, n_keep: int, rng: np.random.Generator):
    """Keep a uniform random subset of ``n_keep`` vertices (in ascending index order)."""
    idx = pool_indices(len(coords), n_keep, rng)
    return coords[idx], T.gather_rows(features, idx), idx


class Classifier(Module):
    """concat(max, mean) over vertices, then three fully connected layers."""

    def __init__(self, d: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        dtype = cfg.np_dtype
        h1, h2 = cfg.classifier_widths
        self.fc1 = Linear(2 * d, h1, rng, dtype=dtype)
        self.bn1 = BatchNorm(h1, cfg.bn_momentum, cfg.bn_eps, dtype=dtype)
        self.fc2 = Linear(h1, h2, rng, dtype=dtype)
        self.bn2 = BatchNorm(h2, cfg.bn_momentum, cfg.bn_eps, dtype=dtype)
        self.fc3 = Linear(h2, cfg.num_classes, rng, dtype=dtype)
        self.slope = cfg.leaky_slope
        self.p = cfg.dropout

    @staticmethod
    def global_feature(x: Tensor) -> Tensor:
        d = x.shape[1]
        return T.reshape(T.concat([T.reduce_max(x, 0), T.reduce_mean(x, 0)], axis=0), (1, 2 * d))

    def head(self, g: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """Logits for stacked global features ``[B, 2d]``.

        In train mode a batch of one cannot supply batch statistics, so the
        running statistics are used for it instead.
        """
        batch_stats = self.training and g.shape[0] >= 2
        y = T.leaky_relu(self.fc1(g), self.slope)
        y = T.dropout(self.bn1(y, batch_stats), self.p, self.training, rng)
        y = T.leaky_relu(self.fc2(y), self.slope)
        y = T.dropout(self.bn2(y, batch_stats), self.p, self.training, rng)
        return self.fc3(y)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        return T.reshape(self.head(self.global_feature(x), rng), (self.fc3.d_out,))


class EVVGCNN(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        blocks = []
        for d_in, d_out in cfg.mfrl_pairs:
            if cfg.mfrl_mode == "mfrl":
                shortcut = "identity" if d_in == d_out else "projection"
                blocks.append(MFRL(MfrlConfig(cfg.n_adj, cfg.n_dis, d_in, d_out, shortcut), rng, cfg))
            else:
                blocks.append(SFRL(SfrlConfig(cfg.n_neigh_total, d_in, d_out), rng, cfg))
        self.mfrl1, self.mfrl2, self.mfrl3, self.mfrl4 = blocks
        self.post = LinearBN(cfg.mfrl_widths[-1], cfg.post_width, rng, "relu", cfg)
        self.classifier = Classifier(cfg.post_width, cfg, rng)
        self.assign_names()
        # separate streams so data order never perturbs pooling or dropout
        self.pool_rng = np.random.default_rng([cfg.seed, 1])
        self.dropout_rng = np.random.default_rng([cfg.seed, 2])

    @property
    def blocks(self) -> list[Module]:
        return [self.mfrl1, self.mfrl2, self.mfrl3, self.mfrl4]

    def _stage(self, coords: np.ndarray, graph: EventGraph | None) -> dict:
        """k-NN rows and per-layer inputs for one graph; memoized on unpooled graphs."""
        if graph is not None:
            store = graph.__dict__.setdefault("_knn_cache", {})
            key = (self.cfg.n_neigh_total, self.cfg.mfrl_mode, self.cfg.n_adj)
            if key not in store:
                store[key] = self._stage(graph.coords, None)
            return store[key]
        cfg = self.cfg
        rows = knn(coords, cfg.n_neigh_total)
        if cfg.mfrl_mode == "mfrl":
            return {"rows": rows, "split": split_with_relations(coords, rows, cfg.n_adj, cfg.n_dis)}
        return {"rows": rows, "relations": geometric_relations(coords, rows)}

    def _union(self, stages: list[dict], sizes: list[int]) -> dict:
        """Merge per-graph stages into one disjoint-union graph (indices offset)."""
        if len(stages) == 1:
            return stages[0]
        offsets = np.cumsum([0] + sizes[:-1])
        rows = np.concatenate([s["rows"] + o for s, o in zip(stages, offsets)])
        if "relations" in stages[0]:
            return {"rows": rows, "relations": np.concatenate([s["relations"] for s in stages])}
        adj = np.concatenate([s["split"][0].adjacent + o for s, o in zip(stages, offsets)])
        dis = np.concatenate([s["split"][0].distant + o for s, o in zip(stages, offsets)])
        rel_adj = np.concatenate([s["split"][1] for s in stages])
        rel_dis = np.concatenate([s["split"][2] for s in stages]) if self.cfg.n_dis else None
        return {"rows": rows, "split": (NeighborTable(adj, dis), rel_adj, rel_dis)}

    def embed_batch(self, graphs: Sequence[EventGraph], features: Tensor | None = None) -> Tensor:
        """Backbone over a batch: ``[B, 2 * post_width]`` global features.

        ``features`` optionally replaces the stacked vertex features (used to
        differentiate with respect to the input).

        The batch runs as one disjoint union of graphs, so batch-norm
        statistics cover every graph in it while k-NN, pooling and the
        global max/mean stay per graph.
        """
        cfg = self.cfg
        for i, graph in enumerate(graphs):
            if len(graph) < cfg.n_neigh_total:
                raise ValueError(f"graph {i} has {len(graph)} vertices, fewer than n_adj + n_dis = {cfg.n_neigh_total}")
            if graph.feature_dim != cfg.in_dim:
                raise ValueError(f"graph {i} feature dim {graph.feature_dim} != model input dim {cfg.in_dim}")
        dtype = cfg.np_dtype
        coords = [g.coords.astype(dtype) for g in graphs]
        sources: list[EventGraph | None] = list(graphs)
        if features is None:
            x = Tensor(np.concatenate([g.features for g in graphs]).astype(dtype, copy=False))
        else:
            x = features
        pool_rng = self.pool_rng if self.training else np.random.default_rng([cfg.seed, 1])
        for i, block in enumerate(self.blocks):
            sizes = [len(c) for c in coords]
            stage = self._union([self._stage(c, s) for c, s in zip(coords, sources)], sizes)
            union = np.concatenate(coords)
            if isinstance(block, MFRL):
                x = block(union, x, stage["rows"], {("split", cfg.n_adj, cfg.n_dis): stage["split"]})
            else:
                x = block(union, x, stage["rows"], stage["relations"])
            if cfg.pools_active and i < 3:
                keep, start = [], 0
                for j, c in enumerate(coords):
                    target = max(min(cfg.pool_sizes[i], len(c)), cfg.n_neigh_total)
                    idx = pool_indices(len(c), target, pool_rng)
                    coords[j] = c[idx]
                    keep.append(idx + start)
                    start += len(c)
                x = T.gather_rows(x, np.concatenate(keep))
                sources = [None] * len(graphs)
        x = self.post(x)
        if len(graphs) == 1:
            return Classifier.global_feature(x)
        feats, start = [], 0
        for c in coords:
            feats.append(Classifier.global_feature(T.gather_rows(x, np.arange(start, start + len(c)))))
            start += len(c)
        return T.concat(feats, axis=0)

    def embed(self, graph: EventGraph) -> Tensor:
        """Backbone output for one graph: ``[1, 2 * post_width]`` global feature."""
        return self.embed_batch([graph])

    def head(self, g: Tensor) -> Tensor:
        return self.classifier.head(g, self.dropout_rng)

    def forward_batch(self, graphs: Sequence[EventGraph]) -> Tensor:
        return self.head(self.embed_batch(graphs))

    def forward(self, graph: EventGraph) -> Tensor:
        return T.reshape(self.forward_batch([graph]), (self.cfg.num_classes,))

    def __call__(self, graph: EventGraph) -> Tensor:
        return self.forward(graph)


# complexity accounting


@dataclass
class ComplexityReport:
    parameters: int
    macs: int

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def gflops(self) -> float:
        return self.flops / 1e9


def _linear_params(d_in, d_out, bias=True):
    return d_in * d_out + (d_out if bias else 0)


def _sfrl_cost(n, k, d_in, d_out):
    params = _linear_params(6, k) + 2 * k + _linear_params(d_in, d_out) + 2 * d_out
    macs = n * k * 6 * k + n * d_in * d_out + n * k * k * d_out
    return params, macs


def count_complexity(cfg: ModelConfig, n_vertices: int | None = None) -> ComplexityReport:
    """Closed-form parameter and multiply-accumulate count for one graph.

    Linear layers count the rows they actually transform (the neighbour
    feature transform runs once per vertex before the gather); each scoring
    product counts ``n * k * k * d_out``.
    """
    n = cfg.voxel.n_points if n_vertices is None else n_vertices
    params = macs = 0
    for i, (d_in, d_out) in enumerate(cfg.mfrl_pairs):
        if cfg.mfrl_mode == "mfrl":
            for k in (cfg.n_adj, cfg.n_dis):
                if k:
                    p, m = _sfrl_cost(n, k, d_in, d_out)
                    params, macs = params + p, macs + m
            if d_in != d_out:
                params += d_in * d_out
                macs += n * d_in * d_out
        else:
            p, m = _sfrl_cost(n, cfg.n_neigh_total, d_in, d_out)
            params, macs = params + p, macs + m
        if cfg.pools_active and i < 3:
            n = max(min(cfg.pool_sizes[i], n), cfg.n_neigh_total)
    d4 = cfg.mfrl_widths[-1]
    params += _linear_params(d4, cfg.post_width) + 2 * cfg.post_width
    macs += n * d4 * cfg.post_width
    h1, h2 = cfg.classifier_widths
    for a, b in ((2 * cfg.post_width, h1), (h1, h2)):
        params += _linear_params(a, b) + 2 * b
        macs += a * b
    params += _linear_params(h2, cfg.num_classes)
    macs += h2 * cfg.num_classes
    return ComplexityReport(params, macs)
