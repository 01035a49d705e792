"""Config parsing, precedence, validation, and round-trip."""
import dataclasses

import pytest

from nesykit.config import (ConfigError, ExperimentConfig, apply_overrides,
                            config_dict, render_config, resolve_config,
                            validate)


def test_defaults_validate():
    cfg = resolve_config()
    assert cfg.task.name == "sum"
    assert cfg.train.epochs == 50
    assert cfg.train.seeds == (0,)


def test_file_parsing(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# experiment file\n"
        "[task]\n"
        "name = parity   # inline comment\n"
        "seq_len = 4\n"
        "anchor_count = 128\n"
        "\n"
        "[model]\n"
        "backbone = mlp\n"
        "num_symbols = 2\n"
        "shared_net = false\n"
        "\n"
        "[train]\n"
        "epochs = 1000\n"
        "seeds = 0, 1, 2\n")
    cfg = resolve_config(path)
    assert cfg.task.name == "parity"
    assert cfg.task.anchor_count == 128
    assert cfg.model.backbone == "mlp"
    assert cfg.model.shared_net is False
    assert cfg.train.seeds == (0, 1, 2)
    assert cfg.train.epochs == 1000


def test_override_precedence_beats_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("[train]\nepochs = 7\nbatch_size = 64\n")
    cfg = resolve_config(path, overrides=["train.epochs=9"])
    assert cfg.train.epochs == 9        # CLI wins
    assert cfg.train.batch_size == 64   # file wins over default (32)


def test_unknown_key_names_exact_path():
    with pytest.raises(ConfigError, match=r"train\.epochz"):
        resolve_config(overrides=["train.epochz=3"])
    with pytest.raises(ConfigError, match="unknown config section: nope"):
        resolve_config(overrides=["nope.epochs=3"])


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("[model]\nbackbone = cnn\nwidth = 3\n")
    with pytest.raises(ConfigError, match=r"model\.width"):
        resolve_config(path)


def test_bad_values_rejected():
    with pytest.raises(ConfigError, match=r"train\.epochs"):
        resolve_config(overrides=["train.epochs=soon"])
    with pytest.raises(ConfigError, match=r"model\.shared_net"):
        resolve_config(overrides=["model.shared_net=maybe"])
    with pytest.raises(ConfigError, match="section.key=value"):
        resolve_config(overrides=["epochs=3"])


@pytest.mark.parametrize("override,message", [
    ("task.name=division", "unknown task"),
    ("model.backbone=transformer", "unknown backbone"),
    ("train.batch_size=0", "batch_size"),
    ("train.seeds=", "at least one seed"),
    ("policy.epsilon=1.5", "epsilon"),
    ("task.anchor_count=5", "anchor_count"),
    ("train.phase1_epochs=3", "phase1_epochs"),
])
def test_validation_errors(override, message):
    with pytest.raises(ConfigError, match=message):
        resolve_config(overrides=[override])


def test_epochs_zero_allowed_for_baselines():
    assert resolve_config(overrides=["train.epochs=0"]).train.epochs == 0


def test_render_round_trip(tmp_path):
    cfg = resolve_config(overrides=[
        "task.name=multidigit", "train.phase1_epochs=10",
        "train.seeds=3,4", "optim.rule_lr=0.02", "model.dtype=float64"])
    path = tmp_path / "echo.cfg"
    path.write_text(render_config(cfg))
    again = resolve_config(path)
    assert config_dict(again) == config_dict(cfg)


def test_groups_are_independent_instances():
    a, b = ExperimentConfig(), ExperimentConfig()
    a.train.epochs = 3
    assert b.train.epochs == 50
    assert dataclasses.asdict(b)["train"]["epochs"] == 50


def test_idx_source_requires_dir():
    with pytest.raises(ConfigError, match="data_dir"):
        resolve_config(overrides=["data.source=idx"])
    cfg = resolve_config(overrides=["data.source=idx", "data.data_dir=/tmp/mnist"])
    assert validate(cfg) is cfg
