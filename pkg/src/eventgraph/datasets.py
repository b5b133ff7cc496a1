"""Synthetic moving-shape classification data and labels manifests."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import EventStream, SceneSpec, random_scene, synth_generate
from .graph import EventGraph, VoxelParams, build_graph, build_point_graph

CLASSES = ("square", "disk", "bar")


@dataclass(frozen=True)
class ShapeDatasetConfig:
    """Scene distribution for the shape task; one class per shape kind."""

    width: int = 128
    height: int = 128
    duration: int = 100_000
    size_min: float = 30.0
    size_max: float = 48.0
    speed_min: float = 0.3
    speed_max: float = 0.5
    threshold: float = 0.3
    position_jitter: float | None = 2.0  # max start offset from the frame centre, px
    n_train: int = 300
    n_test: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.size_min > self.size_max or self.speed_min > self.speed_max:
            raise ValueError("range minimum exceeds maximum")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("split sizes must be >= 0")


@dataclass
class Sample:
    stream: EventStream
    label: int
    scene: SceneSpec


def make_split(cfg: ShapeDatasetConfig, split: str) -> list[Sample]:
    """Class-balanced samples; train and test draw from disjoint seed streams."""
    n = {"train": cfg.n_train, "test": cfg.n_test}[split]
    stream_id = 0 if split == "train" else 1
    rng = np.random.default_rng([cfg.seed, stream_id])
    labels = np.arange(n) % len(CLASSES)
    rng.shuffle(labels)
    out = []
    for i, label in enumerate(labels):
        scene = random_scene(
            rng,
            CLASSES[label],
            cfg.width,
            cfg.height,
            cfg.duration,
            (cfg.size_min, cfg.size_max),
            (cfg.speed_min, cfg.speed_max),
            cfg.threshold,
            cfg.position_jitter,
        )
        stream = synth_generate(scene, seed=int(rng.integers(2**31)))
        if len(stream) == 0:
            raise RuntimeError(f"scene {i} of split {split} produced no events")
        out.append(Sample(stream, int(label), scene))
    return out


def to_graphs(
    samples: Sequence[Sample], params: VoxelParams, mode: str = "voxel", seed: int = 0
) -> list[EventGraph]:
    if mode == "voxel":
        return [build_graph(s.stream, params, s.label) for s in samples]
    if mode == "point":
        return [build_point_graph(s.stream, params, seed + i, s.label) for i, s in enumerate(samples)]
    raise ValueError(f"unknown graph mode {mode!r}")


def write_manifest(rows: Sequence[tuple[str, int]], path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label"])
        writer.writerows(rows)


def read_manifest(path: str) -> list[tuple[str, int]]:
    """Rows of ``(path, label)``; relative paths resolve against the manifest's folder."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as f:
        text = f.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["path", "label"]:
        raise ValueError(f"{path}: expected header 'path,label'")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != 2:
            raise ValueError(f"{path}: malformed line {lineno}")
        try:
            label = int(row[1])
        except ValueError:
            raise ValueError(f"{path}: bad label at line {lineno}") from None
        rows.append((os.path.join(base, row[0]), label))
    return rows
