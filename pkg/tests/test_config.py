import numpy as np
import pytest
import yaml

from eventgraph import config as C
from eventgraph.events import synth_generate
from eventgraph.model import ModelConfig


def test_defaults_round_trip_through_yaml():
    cfg = C.RunConfig()
    assert C.from_dict(yaml.safe_load(cfg.to_yaml())) == cfg


def test_defaults_mirror_reference_hyperparameters():
    cfg = C.RunConfig()
    assert (cfg.voxel.v_h, cfg.voxel.v_w, cfg.voxel.v_a, cfg.voxel.A) == (5, 5, 3.0, 8.0)
    assert (cfg.model.n_adj, cfg.model.n_dis, cfg.model.pool_sizes) == (10, 15, (896, 768, 640))
    assert cfg.model.dropout == 0.5
    assert (cfg.optim.kind, cfg.optim.lr, cfg.optim.min_lr, cfg.optim.epochs, cfg.optim.batch_size) == ("sgd", 0.1, 1e-6, 250, 32)


@pytest.mark.parametrize(
    "data",
    [{"model": {"widht": 3}}, {"voxel": {"vh": 2}}, {"optimiser": {}}, {"optim": {"lr": 0.1, "nesterov": True}}, {"scene": {"colour": 1}}],
)
def test_unknown_keys_are_errors(data):
    with pytest.raises(C.ConfigError):
        C.from_dict(data)


def test_invalid_values_are_config_errors():
    with pytest.raises(C.ConfigError):
        C.from_dict({"optim": {"lr": -1}})
    with pytest.raises(C.ConfigError):
        C.from_dict({"model": "not a mapping"})


def test_dotted_overrides_and_aliases():
    cfg = C.load(overrides={"model.pooling.sizes": "800,700,600", "optim.epochs": "7", "voxel.np": "1024", "model.widths": "8,8,8,8"})
    assert cfg.model.pool_sizes == (800, 700, 600)
    assert cfg.optim.epochs == 7 and cfg.voxel.n_points == 1024 == cfg.model.voxel.n_points
    assert cfg.model.mfrl_widths == (8, 8, 8, 8)


def test_override_path_must_have_two_parts():
    with pytest.raises(C.ConfigError):
        C.load(overrides={"epochs": "3"})
    with pytest.raises(C.ConfigError):
        C.load(overrides={"optim.sched.kind": "3"})


def test_parse_value():
    assert C.parse_value("3") == 3 and C.parse_value("0.5") == 0.5
    assert C.parse_value("a,b") == ["a", "b"] and C.parse_value("[1, 2]") == [1, 2]
    assert C.parse_value("true") is True


def test_precedence_presets_file_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("optim:\n  epochs: 11\n  lr: 0.05\n")
    cfg = C.load(str(path), ["desk", "adam"], {"optim.lr": "0.02"})
    assert cfg.optim.kind == "adam" and cfg.optim.epochs == 11 and cfg.optim.lr == 0.02
    assert cfg.model.num_classes == 3 and cfg.voxel.v_h == 2


def test_unknown_preset():
    with pytest.raises(C.ConfigError):
        C.load(presets=["huge"])


def test_bad_yaml_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("- just\n- a list\n")
    with pytest.raises(C.ConfigError):
        C.load(str(path))


@pytest.mark.parametrize("name", sorted(C.PRESETS))
def test_every_preset_is_valid(name):
    assert isinstance(C.load(presets=[name]).model, ModelConfig)


def test_echo_reproduces_config(tmp_path):
    cfg = C.load(presets=["desk", "np1024"], overrides={"optim.seed": "4"})
    path = tmp_path / "echo.yaml"
    path.write_text(cfg.to_yaml())
    assert C.load(str(path)) == cfg


def test_scene_file_round_trip():
    text = """
width: 32
height: 32
duration: 5000
threshold: 0.3
shapes:
  - kind: square
    size: 8
    position: [16, 16]
    velocity: [0.5, 0.0]
    contrast: 1.0
"""
    spec = C.scene_from_dict(yaml.safe_load(text))
    assert spec.shapes[0].position == (16, 16) and len(synth_generate(spec, 0)) > 0


def test_scene_file_rejects_unknown_and_invalid():
    with pytest.raises(C.ConfigError):
        C.scene_from_dict({"width": 32, "height": 32, "duration": 1000, "colour": 3})
    with pytest.raises(C.ConfigError):
        C.scene_from_dict({"width": 32, "height": 32, "duration": 1000, "shapes": [{"kind": "square", "size": 8, "position": [16, 16], "spin": 1}]})
    with pytest.raises(C.ConfigError):
        C.scene_from_dict({"width": 32, "height": 32, "duration": 1000, "shapes": [{"kind": "square", "size": 40, "position": [16, 16]}]})
