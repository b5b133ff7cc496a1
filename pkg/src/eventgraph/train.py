"""Optimizers, learning-rate schedules, training loop and evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .graph import EventGraph
from .model import EVVGCNN, ModelConfig
from .nn import Parameter

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    schedule: str = "cosine"
    min_lr: float = 1e-6
    step_factor: float = 0.5
    step_every: int = 20
    epochs: int = 250
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.schedule not in ("cosine", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")


def sgd_preset(**overrides) -> OptimizerConfig:
    return OptimizerConfig(**{"kind": "sgd", "lr": 0.1, "schedule": "cosine", "min_lr": 1e-6, "epochs": 250, **overrides})


def adam_preset(**overrides) -> OptimizerConfig:
    return OptimizerConfig(
        **{"kind": "adam", "lr": 0.001, "schedule": "step", "step_factor": 0.5, "step_every": 20, "epochs": 250, **overrides}
    )


def lr_at(cfg: OptimizerConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.schedule == "step":
        return cfg.lr * cfg.step_factor ** (epoch // cfg.step_every)
    if cfg.epochs == 1:
        return cfg.lr
    return cfg.min_lr + (cfg.lr - cfg.min_lr) * (1 + math.cos(math.pi * epoch / (cfg.epochs - 1))) / 2


class SGD:
    """Heavy-ball momentum: ``v <- m v + g``, ``p <- p - lr v``."""

    def __init__(self, params: Sequence[Parameter], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= (lr * v).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params: Sequence[Parameter], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)


def make_optimizer(cfg: OptimizerConfig, params):
    if cfg.kind == "sgd":
        return SGD(params, cfg.momentum)
    return Adam(params, cfg.betas, cfg.eps)


@dataclass
class RunResult:
    seed: int
    train_loss: list[float] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    final_accuracy: float = 0.0
    best_accuracy: float = 0.0
    best_epoch: int = 0
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "lr", "loss", "accuracy"])
        for i, (lr, loss, acc) in enumerate(zip(self.lr, self.train_loss, self.eval_accuracy)):
            writer.writerow([i, repr(lr), repr(loss), repr(acc)])
        return buf.getvalue()


class TrainingError(RuntimeError):
    pass


def split_validation(dataset: Sequence[EventGraph], fraction: float, seed: int):
    """Hold out ``fraction`` of the data (seeded); returns ``(train, val)``."""
    if fraction <= 0:
        return list(dataset), []
    idx = np.random.default_rng([seed, 7]).permutation(len(dataset))
    n_val = max(1, int(round(fraction * len(dataset))))
    return [dataset[i] for i in idx[n_val:]], [dataset[i] for i in idx[:n_val]]


def train(
    model_cfg: ModelConfig,
    dataset: Sequence[EventGraph],
    opt_cfg: OptimizerConfig,
    eval_set: Sequence[EventGraph] | None = None,
    on_epoch: Callable[[int, RunResult], None] | None = None,
) -> tuple[RunResult, dict[str, np.ndarray], EVVGCNN]:
    """Train from scratch; returns the run record, the best-eval state and the final model.

    Each batch runs one forward/backward over all its graphs with the loss
    averaged over the batch. Accuracy after every epoch is measured on
    ``eval_set``, else on a held-out ``val_fraction`` split, else on the
    training data. The best state is the earliest epoch reaching the highest
    accuracy.
    """
    if not dataset:
        raise ValueError("empty training set")
    if any(g.label is None for g in dataset):
        raise ValueError("every training graph needs a label")
    train_set, val_set = split_validation(dataset, opt_cfg.val_fraction, opt_cfg.seed)
    if eval_set is None:
        eval_set = val_set or train_set

    start = time.perf_counter()
    model = EVVGCNN(model_cfg)
    params = model.parameters()
    opt = make_optimizer(opt_cfg, params)
    rng = np.random.default_rng([opt_cfg.seed, 3])
    result = RunResult(seed=opt_cfg.seed)
    best_state = model.state_dict()
    best_acc = -1.0

    for epoch in range(opt_cfg.epochs):
        lr = lr_at(opt_cfg, epoch)
        order = rng.permutation(len(train_set))
        model.train()
        total = 0.0
        for b in range(0, len(order), opt_cfg.batch_size):
            batch_idx = order[b : b + opt_cfg.batch_size]
            graphs = [train_set[i] for i in batch_idx]
            labels = np.array([g.label for g in graphs])
            model.zero_grad()
            try:
                logits = model.forward_batch(graphs)
            except ValueError as exc:
                bad = _first_failing(model, graphs, batch_idx)
                raise TrainingError(f"forward failed on training sample {bad}: {exc}") from exc
            loss = T.softmax_cross_entropy(logits, labels)
            loss.backward()
            opt.step(lr)
            total += float(loss.data) * len(graphs)
        result.train_loss.append(total / len(train_set))
        result.lr.append(lr)
        acc, _ = evaluate_model(model, eval_set)
        result.eval_accuracy.append(acc)
        if acc > best_acc:
            best_acc, best_state, result.best_epoch = acc, model.state_dict(), epoch
        log.info("epoch %d lr %.3g loss %.4f acc %.4f", epoch, lr, result.train_loss[-1], acc)
        if on_epoch is not None:
            on_epoch(epoch, result)

    result.final_accuracy = result.eval_accuracy[-1]
    result.best_accuracy = best_acc
    result.seconds = time.perf_counter() - start
    return result, best_state, model


def _first_failing(model: EVVGCNN, graphs, indices) -> int:
    for g, i in zip(graphs, indices):
        try:
            with T.no_grad():
                model.embed(g)
        except ValueError:
            return int(i)
    return int(indices[0])


def evaluate_model(model: EVVGCNN, dataset: Sequence[EventGraph]) -> tuple[float, np.ndarray]:
    """Eval-mode accuracy and ``[true, predicted]`` confusion counts.

    Exact logit ties resolve to the lowest class index.
    """
    was_training = model.training
    model.eval()
    c = model.cfg.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    try:
        with T.no_grad():
            for g in dataset:
                pred = int(np.argmax(model.forward(g).data))
                confusion[g.label, pred] += 1
    finally:
        model.train(was_training)
    total = confusion.sum()
    return (float(np.trace(confusion) / total) if total else 0.0), confusion


def load_model(model_cfg: ModelConfig, state: dict[str, np.ndarray]) -> EVVGCNN:
    model = EVVGCNN(model_cfg)
    model.load_state_dict(state)
    return model.eval()


def evaluate(model_cfg: ModelConfig, state: dict[str, np.ndarray], dataset: Sequence[EventGraph]) -> tuple[float, np.ndarray]:
    return evaluate_model(load_model(model_cfg, state), dataset)


@dataclass
class RepeatSummary:
    mean: float
    std: float
    accuracies: list[float]
    runs: list[RunResult]


def repeat_runs(
    model_cfg: ModelConfig,
    dataset: Sequence[EventGraph],
    opt_cfg: OptimizerConfig,
    seeds: Sequence[int],
    eval_set: Sequence[EventGraph] | None = None,
) -> RepeatSummary:
    """Train and evaluate once per seed (model and data-order seeds both set)."""
    if not seeds:
        raise ValueError("need at least one seed")
    runs = []
    for s in seeds:
        result, _, _ = train(model_cfg.replace(seed=int(s)), dataset, replace(opt_cfg, seed=int(s)), eval_set)
        runs.append(result)
    accs = [r.final_accuracy for r in runs]
    return RepeatSummary(float(np.mean(accs)), float(np.std(accs)), accs, runs)

