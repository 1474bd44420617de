import json

import pytest

from padloop.cli import _jsonable
from padloop.config import RunConfig, apply_seed_env, config_from_dict, load_config
from padloop.errors import InvalidInputError
from padloop.features import FeatureMode


def _same(a, b) -> bool:
    # configs hold numpy arrays, so compare their serialized form
    return json.dumps(_jsonable(a)) == json.dumps(_jsonable(b))


def test_defaults():
    cfg = RunConfig()
    assert cfg.data.m_f == 183 and cfg.data.m_b == 60
    assert cfg.feature_mode is FeatureMode.BANDS
    assert cfg.controller.build().cfg.q_r == cfg.controller.q_r


def test_partial_override_keeps_defaults(monkeypatch):
    monkeypatch.delenv("PADLOOP_SEED", raising=False)
    cfg = config_from_dict({"dbn": {"epochs": 3}, "mode": "EEG"})
    assert cfg.dbn.epochs == 3 and cfg.dbn.finetune_epochs == RunConfig().dbn.finetune_epochs
    assert cfg.feature_mode is FeatureMode.EEG


@pytest.mark.parametrize("data", [
    {"nope": 1},
    {"dbn": {"epochz": 3}},
    {"gp": {"n_grid": "ten"}},
    {"control_enabled": 1},
    {"mode": "RAW"},
    {"horizon": 0},
    {"dbn": {"grad_clip": -1.0}},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(InvalidInputError):
        config_from_dict(data)


def test_optional_field_accepts_null(monkeypatch):
    monkeypatch.delenv("PADLOOP_SEED", raising=False)
    assert config_from_dict({"dbn": {"grad_clip": None}}).dbn.grad_clip is None


def test_seed_env_sets_every_seed():
    cfg = apply_seed_env(RunConfig(), {"PADLOOP_SEED": "11"})
    assert (cfg.seeds.data, cfg.seeds.train, cfg.seeds.simulate, cfg.dbn.seed) == (11, 11, 11, 11)
    assert _same(apply_seed_env(RunConfig(), {}), RunConfig())


def test_yaml_and_json_agree(tmp_path, monkeypatch):
    monkeypatch.delenv("PADLOOP_SEED", raising=False)
    data = {"horizon": 12, "gp": {"n_grid": 4}}
    (tmp_path / "c.json").write_text(json.dumps(data))
    (tmp_path / "c.yaml").write_text("horizon: 12\ngp:\n  n_grid: 4\n")
    assert _same(load_config(tmp_path / "c.json"), load_config(tmp_path / "c.yaml"))


def test_non_mapping_rejected(tmp_path):
    (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(InvalidInputError):
        load_config(tmp_path / "c.yaml")
