import json

import pytest

from targ.config import PRESETS, ConfigError, RunConfig, TrainConfig, train_config, with_overrides


def test_defaults_are_desk_scale():
    c = TrainConfig()
    assert (c.hidden, c.n_layers, c.learning_rate, c.lam, c.batch_size, c.dropout) == (64, 2, 1e-3, 0.5, 8, 0.1)
    assert (c.beta1, c.beta2, c.adam_eps) == (0.9, 0.999, 1e-8)


def test_paper_preset():
    rc = RunConfig.from_dict({"preset": "paper"}, env={})
    c = rc.train
    assert (c.hidden, c.learning_rate, c.batch_size, c.dropout, c.lam) == (768, 3e-5, 8, 0.1, 0.5)
    assert set(PRESETS) == {"desk", "paper"}


@pytest.mark.parametrize("obj", [{"hiden": 64}, {"preset": "huge"}, {"lambda": 1.5}, {"lambda": -0.1},
                                 {"batch_size": 0}, {"ablation": "nothing"}, {"hidden": 10, "n_heads": 4}])
def test_invalid_configs_rejected(obj):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(obj, env={})


def test_seed_environment_override():
    assert RunConfig.from_dict({"seed": 3}, env={"TARG_SEED": "11"}).train.seed == 11
    assert RunConfig.from_dict({"seed": 3}, env={}).train.seed == 3
    with pytest.raises(ConfigError):
        RunConfig.from_dict({}, env={"TARG_SEED": "x"})


def test_load_and_dict_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "desk", "lambda": 0.25, "train_corpus": "t.json"}))
    rc = RunConfig.load(p)
    assert rc.train.lam == 0.25 and rc.train_corpus == "t.json"
    assert train_config(rc.train.to_dict()) == rc.train
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    p.write_text("[1]")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_bilstm_ablation_selects_encoder():
    assert TrainConfig(ablation="bilstm_encoder").encoder_kind == "bilstm"
    assert with_overrides(TrainConfig(), epochs=3).epochs == 3
