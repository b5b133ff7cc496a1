"""Randomized finite-difference gradient checks for every differentiable piece.

Each case draws fresh shapes and values per trial in double precision and
projects the output onto a fixed random tensor before summing, so layers
whose plain sum is constant (batch norm) still get a meaningful check.
Composite layers run in eval mode with random running statistics; the
train-mode batch-norm backward has its own case.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .graph import EventGraph, VoxelParams
from .model import EVVGCNN, MFRL, SFRL, Classifier, MfrlConfig, ModelConfig, SfrlConfig
from .neighbor import knn
from .nn import BatchNorm, GradcheckReport, Module, gradcheck
from .tensor import Tensor

TOLERANCE = 1e-4
STEP = 1e-5
# trials whose piecewise ops land this close to a kink are redrawn
KINK_MARGIN = 1e-4
MAX_REDRAWS = 50
F64 = ModelConfig(dtype="float64", num_classes=2)


def _projected(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    probe = {}

    def wrapped() -> Tensor:
        out = fn()
        if "r" not in probe:
            probe["r"] = Tensor(rng.normal(size=out.shape))
        return T.reduce_sum(T.mul(out, probe["r"]))

    return wrapped


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _leaf(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def _params(module: Module) -> dict[str, Tensor]:
    return dict(module.named_parameters())


def _randomize_bn(module: Module, rng: np.random.Generator) -> None:
    """Non-trivial affine and running statistics for eval-mode checks."""
    for _, child in module.children():
        if isinstance(child, BatchNorm):
            d = child.gamma.shape[0]
            child.gamma.data[...] = rng.uniform(0.5, 1.5, d)
            child.beta.data[...] = rng.normal(0, 0.2, d)
            child.running_mean[...] = rng.normal(0, 0.3, d)
            child.running_var[...] = rng.uniform(0.5, 2.0, d)
        else:
            _randomize_bn(child, rng)


def random_coords(rng: np.random.Generator, n: int, extent: int = 6) -> np.ndarray:
    """``n`` distinct integer voxel coordinates in a small cube."""
    flat = rng.choice(extent**3, size=n, replace=False)
    t, rest = np.divmod(flat, extent * extent)
    x, y = np.divmod(rest, extent)
    return np.stack([x, y, t], axis=1).astype(np.float64)


# cases: each takes a generator and returns a report for one random trial


def case_linear(rng):
    n, d_in, d_out = rng.integers(2, 7), rng.integers(1, 6), rng.integers(1, 6)
    x, w, b = _leaf(rng.normal(size=(n, d_in))), _leaf(rng.normal(size=(d_in, d_out))), _leaf(rng.normal(size=d_out))
    return gradcheck(_projected(lambda: T.linear(x, w, b), rng), {"x": x, "weight": w, "bias": b}, STEP)


def case_batch_norm(rng):
    n, d = rng.integers(2, 9), rng.integers(1, 6)
    x, g, b = _leaf(rng.normal(size=(n, d))), _leaf(rng.uniform(0.5, 1.5, d)), _leaf(rng.normal(size=d))
    weights = rng.integers(1, 4, size=n) if rng.random() < 0.5 else None
    fn = lambda: T.batch_norm(x, g, b, weights=weights)[0]
    return gradcheck(_projected(fn, rng), {"x": x, "gamma": g, "beta": b}, STEP)


def case_batch_norm_eval(rng):
    n, d = rng.integers(1, 6), rng.integers(1, 6)
    x, g, b = _leaf(rng.normal(size=(n, d))), _leaf(rng.uniform(0.5, 1.5, d)), _leaf(rng.normal(size=d))
    mean, var = rng.normal(size=d), rng.uniform(0.5, 2, d)
    fn = lambda: T.batch_norm(x, g, b, mean, var)[0]
    return gradcheck(_projected(fn, rng), {"x": x, "gamma": g, "beta": b}, STEP)


def _elementwise(op):
    def case(rng):
        x = _leaf(_away_from_zero(rng, (rng.integers(1, 6), rng.integers(1, 6))))
        return gradcheck(_projected(lambda: op(x), rng), {"x": x}, STEP)

    return case


def case_softmax_ce(rng):
    n, c = rng.integers(1, 6), rng.integers(2, 7)
    logits = _leaf(rng.normal(size=(n, c)) * 2)
    labels = rng.integers(0, c, size=n)
    return gradcheck(lambda: T.softmax_cross_entropy(logits, labels), {"logits": logits}, STEP)


def case_structural(rng):
    """matmul, bmm, concat, reshape, reductions, gather and neighbour sums in one graph."""
    n, d, k = rng.integers(3, 7), rng.integers(2, 5), 3
    a, b = _leaf(rng.normal(size=(n, d))), _leaf(rng.normal(size=(d, d)))
    s = _leaf(rng.normal(size=(n, k, k)))
    w = _leaf(rng.normal(size=(n, k)))
    rows = rng.integers(0, n, size=(n, k))

    def fn():
        h = T.tanh(T.matmul(a, b))
        stacked = T.reshape(T.gather_rows(h, rows), (n, k, d))
        mixed = T.reduce_sum(T.bmm(s, stacked), axis=1)
        agg = T.neighbor_sum(w, h, rows)
        both = T.concat([mixed, agg], axis=1)
        return T.concat([T.reduce_max(both, 0), T.reduce_mean(both, 0), T.reduce_sum(both, 1)], axis=0)

    return gradcheck(_projected(fn, rng), {"a": a, "b": b, "scores": s, "weights": w}, STEP)


def _sfrl_case(fused: bool):
    def case(rng):
        n, d_in, d_out, k = 32, 4, 8, 5
        layer = SFRL(SfrlConfig(k, d_in, d_out), rng, F64)
        layer.fused = fused
        layer.assign_names()
        _randomize_bn(layer, rng)
        layer.eval()
        coords = random_coords(rng, n)
        rows = knn(coords, k)
        x = _leaf(rng.normal(size=(n, d_in)))
        fn = lambda: layer(coords, x, rows)
        return gradcheck(_projected(fn, rng), {"x": x, **_params(layer)}, STEP)

    return case


def case_mfrl(rng):
    n, n_adj, n_dis = 32, 3, 4
    d_in, d_out = (4, 6) if rng.random() < 0.5 else (5, 5)
    shortcut = "identity" if d_in == d_out else "projection"
    block = MFRL(MfrlConfig(n_adj, n_dis, d_in, d_out, shortcut), rng, F64)
    block.assign_names()
    _randomize_bn(block, rng)
    block.eval()
    coords = random_coords(rng, n)
    rows = knn(coords, n_adj + n_dis)
    x = _leaf(rng.normal(size=(n, d_in)))
    fn = lambda: block(coords, x, rows)
    return gradcheck(_projected(fn, rng), {"x": x, **_params(block)}, STEP)


def case_head(rng):
    d, b = 6, rng.integers(1, 5)
    cfg = F64.replace(classifier_widths=(8, 5), num_classes=3)
    head = Classifier(d, cfg, rng)
    head.assign_names()
    _randomize_bn(head, rng)
    head.eval()
    x = _leaf(rng.normal(size=(rng.integers(1, 9), d)))
    g = _leaf(rng.normal(size=(b, 2 * d)))
    fn = lambda: T.concat([T.reshape(head(x), (1, 3)), head.head(g)], axis=0)
    return gradcheck(_projected(fn, rng), {"x": x, "g": g, **_params(head)}, STEP)


TOY = ModelConfig(
    voxel=VoxelParams(2, 2, 1.0, 8.0, 64),
    mfrl_widths=(8, 8, 8, 8),
    n_adj=4,
    n_dis=4,
    pool_sizes=(),
    post_width=8,
    classifier_widths=(8, 8),
    num_classes=2,
    dtype="float64",
)


def toy_graph(rng: np.random.Generator, cfg: ModelConfig = TOY, n: int = 64) -> EventGraph:
    coords = random_coords(rng, n, extent=8).astype(np.int64)
    feats = rng.normal(size=(n, cfg.in_dim))
    return EventGraph(coords, feats, np.ones(n, dtype=np.int64), cfg.voxel, label=int(rng.integers(cfg.num_classes)))


def case_end_to_end(rng, max_entries: int = 3):
    """Whole network in eval mode on a 64-vertex graph (input 4 -> 8 -> 8 -> 8).

    Up to ``max_entries`` random entries of each parameter are probed.
    """
    model = EVVGCNN(TOY.replace(seed=int(rng.integers(2**31))))
    _randomize_bn(model, rng)
    model.eval()
    graph = toy_graph(rng)
    x = _leaf(graph.features)
    fn = lambda: model.head(model.embed_batch([graph], features=x))
    return gradcheck(_projected(fn, rng), {"features": x, **_params(model)}, STEP, max_entries, rng)


@dataclass
class CaseResult:
    name: str
    trials: int
    max_error: float
    worst_input: str
    seconds: float
    errors: list[float] = field(default_factory=list)
    redraws: int = 0

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol


CASES: dict[str, Callable] = {
    "linear": case_linear,
    "batch_norm": case_batch_norm,
    "batch_norm_eval": case_batch_norm_eval,
    "relu": _elementwise(T.relu),
    "leaky_relu": _elementwise(lambda x: T.leaky_relu(x, 0.01)),
    "tanh": _elementwise(T.tanh),
    "softmax_cross_entropy": case_softmax_ce,
    "structural": case_structural,
    "sfrl": _sfrl_case(True),
    "sfrl_stacked": _sfrl_case(False),
    "mfrl": case_mfrl,
    "classifier_head": case_head,
    "end_to_end": case_end_to_end,
}


def run_case(name: str, trials: int = 20, seed: int = 0) -> CaseResult:
    """``trials`` valid draws of one case; draws near a kink are replaced."""
    fn = CASES[name]
    start = time.perf_counter()
    worst, worst_input, errors = 0.0, "", []
    draw = redraws = 0
    while len(errors) < trials:
        with T.kink_monitor() as kink:
            report: GradcheckReport = fn(np.random.default_rng([seed, draw, len(name)]))
        draw += 1
        if kink[0] < KINK_MARGIN:
            redraws += 1
            if redraws > MAX_REDRAWS:
                raise RuntimeError(f"{name}: too many draws near non-differentiable points")
            continue
        errors.append(report.max_error)
        if report.max_error >= worst:
            worst = report.max_error
            worst_input = max(report.errors, key=report.errors.get)
    return CaseResult(name, trials, worst, worst_input, time.perf_counter() - start, errors, redraws)


def run_suite(trials: int = 20, seed: int = 0, names=None) -> list[CaseResult]:
    return [run_case(n, trials, seed) for n in (names or CASES)]
