"""YAML run configuration with dotted-path overrides and named presets.

A run config has four sections: ``scene`` (synthetic data distribution),
``voxel`` (graph construction), ``model`` and ``optim``. Unknown keys are
rejected everywhere.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Any, Mapping, Sequence

import yaml

from .datasets import ShapeDatasetConfig
from .events import SceneSpec, ShapeSpec
from .graph import VoxelParams
from .model import ModelConfig
from .train import OptimizerConfig

ALIASES = {
    "model.pooling.sizes": "model.pool_sizes",
    "model.widths": "model.mfrl_widths",
    "voxel.np": "voxel.n_points",
}

_MODEL_KEYS = [f.name for f in fields(ModelConfig) if f.name != "voxel"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scene: ShapeDatasetConfig = field(default_factory=ShapeDatasetConfig)
    voxel: VoxelParams = field(default_factory=VoxelParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.model.voxel != self.voxel:
            object.__setattr__(self, "model", self.model.replace(voxel=self.voxel))

    def to_dict(self) -> dict[str, dict[str, Any]]:
        model = {k: _plain(getattr(self.model, k)) for k in _MODEL_KEYS}
        return {
            "scene": _plain(dataclasses.asdict(self.scene)),
            "voxel": _plain(dataclasses.asdict(self.voxel)),
            "model": model,
            "optim": _plain(dataclasses.asdict(self.optim)),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def _build(cls, section: str, values: Mapping[str, Any], allowed: Sequence[str] | None = None):
    allowed = list(allowed) if allowed is not None else [f.name for f in fields(cls)]
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(section + '.' + k for k in unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_dict(data: Mapping[str, Any] | None) -> RunConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - {"scene", "voxel", "model", "optim"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for name, section in data.items():
        if section is not None and not isinstance(section, Mapping):
            raise ConfigError(f"section {name} must be a mapping")
    voxel = _build(VoxelParams, "voxel", data.get("voxel") or {})
    model_values = dict(data.get("model") or {})
    unknown = sorted(set(model_values) - set(_MODEL_KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s) in [model]: {', '.join('model.' + k for k in unknown)}")
    model = _build(ModelConfig, "model", {**model_values, "voxel": voxel}, _MODEL_KEYS + ["voxel"])
    return RunConfig(
        scene=_build(ShapeDatasetConfig, "scene", data.get("scene") or {}),
        voxel=voxel,
        model=model,
        optim=_build(OptimizerConfig, "optim", data.get("optim") or {}),
    )


def parse_value(text: str):
    """Scalars via YAML; a bare comma list becomes a list (``896,768,640``)."""
    if "," in text and not text.strip().startswith(("[", "{")):
        return [parse_value(part) for part in text.split(",") if part.strip()]
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from None


def apply_overrides(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    out = {k: dict(v or {}) for k, v in data.items()}
    for path, value in overrides.items():
        path = ALIASES.get(path, path)
        parts = path.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override {path!r} must look like section.key")
        section, key = parts
        out.setdefault(section, {})[key] = parse_value(value) if isinstance(value, str) else value
    return out


PRESETS: dict[str, dict[str, Any]] = {
    "voxel-default": {"voxel.v_h": 5, "voxel.v_w": 5, "voxel.v_a": 3.0, "voxel.A": 8.0},
    "voxel-small": {"voxel.v_h": 2, "voxel.v_w": 2, "voxel.v_a": 1.0, "voxel.A": 8.0},
    "np512": {"voxel.n_points": 512},
    "np1024": {"voxel.n_points": 1024, "model.pool_sizes": [896, 768, 640]},
    "np2048": {"voxel.n_points": 2048, "model.pool_sizes": [896, 768, 640]},
    "sgd": {"optim.kind": "sgd", "optim.lr": 0.1, "optim.schedule": "cosine", "optim.min_lr": 1e-6, "optim.epochs": 250},
    "adam": {
        "optim.kind": "adam",
        "optim.lr": 0.001,
        "optim.schedule": "step",
        "optim.step_factor": 0.5,
        "optim.step_every": 20,
        "optim.epochs": 250,
    },
    # laptop-scale widths for the three-class shape task
    "desk": {
        "voxel.v_h": 2,
        "voxel.v_w": 2,
        "voxel.v_a": 1.0,
        "voxel.n_points": 512,
        "model.num_classes": 3,
        "model.mfrl_widths": [32, 64, 64, 128],
        "model.post_width": 128,
        "model.classifier_widths": [64, 32],
        "optim.epochs": 50,
    },
}


def load(
    path: str | None = None,
    presets: Sequence[str] = (),
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Defaults, then presets in order, then the file, then explicit overrides."""
    data: dict[str, Any] = {}
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        data = apply_overrides(data, PRESETS[name])
    if path is not None:
        with open(path) as f:
            try:
                loaded = yaml.safe_load(f)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if loaded is not None and not isinstance(loaded, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        for section, values in (loaded or {}).items():
            if isinstance(values, Mapping):
                data.setdefault(section, {}).update(values)
            else:
                data[section] = values
    return from_dict(apply_overrides(data, overrides or {}))


def scene_from_dict(data: Mapping[str, Any]) -> SceneSpec:
    """An explicit scene: sensor fields plus a ``shapes`` list of mappings."""
    data = dict(data)
    shapes = data.pop("shapes", [])
    allowed = {f.name for f in fields(SceneSpec)} - {"shapes"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown scene key(s): {', '.join(unknown)}")
    specs = []
    for i, s in enumerate(shapes):
        extra = sorted(set(s) - {f.name for f in fields(ShapeSpec)})
        if extra:
            raise ConfigError(f"shape {i}: unknown key(s) {', '.join(extra)}")
        s = {k: tuple(v) if isinstance(v, list) else v for k, v in s.items()}
        specs.append(ShapeSpec(**s))
    spec = SceneSpec(shapes=specs, **data)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec
