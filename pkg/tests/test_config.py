import dataclasses

import pytest

from motionrealign.config import (InversionConfig, RunConfig, config_dict, config_from_dict,
                                  dump_config, env_overrides, load_config, parse_config)


def test_parse_sets_typed_values():
    cfg = parse_config("vae.epochs = 3\n# comment\nprojector.no_rec=true\nseed=7\n"
                       "diffusion.lr=0.5  # trailing\n")
    assert cfg.vae.epochs == 3 and cfg.projector.no_rec is True
    assert cfg.seed == 7 and cfg.diffusion.lr == 0.5


@pytest.mark.parametrize("text", ["nope.x=1", "vae.nope=1", "bogus=1", "vae.epochs"])
def test_parse_rejects_bad_lines(text):
    with pytest.raises((KeyError, ValueError)):
        parse_config(text)


def test_bad_boolean():
    with pytest.raises(ValueError):
        parse_config("projector.no_kl=maybe")


def test_env_overrides_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("vae.epochs=3\n")
    cfg = load_config(path, {"MOTIONREALIGN_VAE__EPOCHS": "5", "OTHER": "1"})
    assert cfg.vae.epochs == 5
    assert env_overrides(RunConfig(), {"MOTIONREALIGN_CORPUS_SEED": "2"}).corpus_seed == 2


def test_dump_parse_round_trip():
    cfg = dataclasses.replace(RunConfig(), seed=3)
    assert parse_config(dump_config(cfg)) == cfg


def test_dict_round_trip_and_unknown_keys():
    cfg = RunConfig()
    assert config_from_dict(config_dict(cfg)) == cfg
    with pytest.raises(KeyError):
        config_from_dict({"mystery": 1})


def test_inversion_validation():
    with pytest.raises(ValueError):
        InversionConfig(loss_space="pixel")
    with pytest.raises(ValueError):
        InversionConfig(steps=0)
