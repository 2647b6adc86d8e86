from pathlib import Path

import pytest

from caelab.config import (
    RunConfig,
    apply_overrides,
    dump_config,
    load_config,
    parse_config,
    save_config,
)
from caelab.errors import ConfigError

CONFIG_DIR = Path(__file__).parent / "configs"


def test_defaults_fill_every_block():
    cfg = parse_config("system:\n  n_t: 2\n")
    assert (cfg.system.k, cfg.system.l, cfg.system.order) == (72, 4, 4)
    assert cfg.system.receive_antennas == 2
    assert cfg.channel.profile == "multipath" and cfg.channel.taps == 13
    assert cfg.rf.ibo_db == 3.0 and cfg.rf.hpa
    assert cfg.method.name == "none" and cfg.method.clip_ratio_db == 4.08
    assert cfg.detector == "mle"
    assert cfg.run.frames == 7000 and cfg.run.thresholds_db[-1] == 14.0
    assert cfg.training.gradual_start_epoch == 45 and cfg.training.rho_3 == 0.001
    assert cfg.model.encoder_channels == (21, 15, 21)


def test_unknown_key_reports_line_and_path():
    with pytest.raises(ConfigError) as info:
        parse_config("system:\n  n_t: 2\n  kk: 16\n")
    assert info.value.line == 3
    assert info.value.key == "system.kk"
    assert "unknown key 'system.kk'" in str(info.value)
    assert str(info.value).startswith("line 3:")


def test_missing_system_block():
    with pytest.raises(ConfigError) as info:
        parse_config("rf:\n  ibo_db: 6\n")
    assert info.value.key == "system"
    assert "missing required key 'system'" in str(info.value)


def test_invalid_value_points_at_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config("system:\n  n_t: 2\n  order: 8\n")
    assert info.value.line == 3
    assert info.value.key == "system.order"


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        parse_config("system:\n  n_t: [1, 2\n")
    assert info.value.line is not None
    assert "cannot parse YAML" in str(info.value)


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_cae_detector_requires_cae_method():
    with pytest.raises(ConfigError) as info:
        parse_config("system:\n  n_t: 2\ndetector: cae\n")
    assert "detector" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config("system:\n  n_t: 2\nmethod:\n  name: cae\n")


def test_gradual_start_cannot_exceed_epochs():
    with pytest.raises(ConfigError) as info:
        parse_config("system:\n  n_t: 2\ntraining:\n  epochs: 5\n  gradual_start_epoch: 6\n")
    assert info.value.key == "training"
    assert info.value.line == 3


def test_example_config_round_trips(tmp_path):
    cfg = load_config(CONFIG_DIR / "qam16_4x4.yaml")
    assert (cfg.system.n_t, cfg.system.order, cfg.method.name) == (4, 16, "cf")
    assert parse_config(dump_config(cfg)) == cfg
    save_config(cfg, tmp_path / "copy.yaml")
    assert load_config(tmp_path / "copy.yaml") == cfg


def test_cae_example_config_is_consistent():
    cfg = load_config(CONFIG_DIR / "qam16_4x4_cae.yaml")
    assert cfg.detector == "cae"
    assert cfg.model.decoder_iterations == 10


def test_overrides_replace_run_fields():
    cfg = parse_config("system:\n  n_t: 2\n")
    assert apply_overrides(cfg) is cfg
    updated = apply_overrides(cfg, seed=5, frames=10, out="x.csv", workers=2)
    assert (updated.run.seed, updated.run.frames, updated.run.out, updated.run.workers) == (5, 10, "x.csv", 2)
    assert cfg.run.frames == 7000


def test_invalid_override_rejected():
    cfg = parse_config("system:\n  n_t: 2\n")
    with pytest.raises(ConfigError) as info:
        apply_overrides(cfg, frames=0)
    assert info.value.key == "frames"


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_worker_default_from_environment(monkeypatch):
    monkeypatch.setenv("CAELAB_WORKERS", "3")
    assert RunConfig().workers == 3
    monkeypatch.setenv("CAELAB_WORKERS", "many")
    assert RunConfig().workers == 1
