import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import tiny_config
from motionrealign.config import InversionConfig
from motionrealign.diffcore import grad_check, parameter
from motionrealign.diffusion import Denoiser, schedule_from_config
from motionrealign.mti import (TEMPLATES, PlaceholderToken, generate_with_token, init_placeholder,
                               invert_motion, mti_loss)
from motionrealign.pipeline import MissingStageError, new_pipeline
from motionrealign.projector import Projector
from motionrealign.textenc import UNK, all_captions_vocabulary
from motionrealign.vae import MotionVAE

CFG = tiny_config()


class OracleDenoiser:
    """Returns exactly the noise that was used to build ``z_t``."""

    def __init__(self):
        self.eps = None

    def __call__(self, z_t, t, cond=None, drop=None, rng=None):
        return self.eps


def _untrained(denoiser=None):
    vocab = all_captions_vocabulary(CFG.text_dim, 0)
    return SimpleNamespace(
        vocab=vocab, schedule=schedule_from_config(CFG.diffusion), latent_scale=0.37,
        vae=MotionVAE(92, CFG.vae, 0), projector=Projector(CFG.vae.latent_dim, CFG.text_dim,
                                                           CFG.projector, 0),
        denoiser=denoiser or Denoiser(CFG.vae.latent_dim, CFG.text_dim, CFG.diffusion, 0))


@pytest.mark.parametrize("space", ["lead", "mld", "feat"])
def test_oracle_denoiser_gives_zero_loss(space):
    oracle = OracleDenoiser()
    pipe = _untrained(oracle)
    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((3, CFG.vae.latent_dim))
    oracle.eps = rng.standard_normal(z0.shape)
    v = init_placeholder("walks", pipe.vocab).embedding
    loss = mti_loss(pipe, z0, np.array([1, 500, 1000]), oracle.eps, [0, 1, 2], v, space,
                    lengths=[20, 30, 40])
    assert float(np.asarray(getattr(loss, "data", loss))) == 0.0


@pytest.mark.parametrize("space", ["lead", "mld", "feat"])
def test_loss_gradient_wrt_placeholder(space):
    pipe = _untrained()
    rng = np.random.default_rng(1)
    z0 = rng.standard_normal((2, CFG.vae.latent_dim))
    eps = rng.standard_normal(z0.shape)
    v = parameter(init_placeholder("runs", pipe.vocab).embedding)
    t = np.array([30, 700])
    err = grad_check(lambda: mti_loss(pipe, z0, t, eps, [3, 5], v, space, [18, 25]), {"v": v},
                     eps=1e-5)
    assert err < 1e-4


def test_target_identity_guard():
    pipe = _untrained()
    with pytest.raises(ValueError):
        mti_loss(pipe, np.zeros((1, CFG.vae.latent_dim)), np.array([5]),
                 np.zeros((1, CFG.vae.latent_dim)), [0], np.ones(CFG.text_dim), "feat")
    with pytest.raises(ValueError):
        mti_loss(pipe, np.zeros((1, CFG.vae.latent_dim)), np.array([5]),
                 np.zeros((1, CFG.vae.latent_dim)), [0], np.ones(CFG.text_dim), "pixels")


def test_init_copies_row_and_falls_back_to_unk():
    vocab = all_captions_vocabulary(CFG.text_dim, 0)
    tok = init_placeholder("walks", vocab)
    np.testing.assert_array_equal(tok.embedding, vocab.table[vocab.index["walks"]])
    tok.embedding[:] = 0
    assert np.any(vocab.table[vocab.index["walks"]] != 0)
    np.testing.assert_array_equal(init_placeholder("moonwalks", vocab).embedding,
                                  vocab.table[vocab.index[UNK]])


def test_templates_carry_the_placeholder():
    assert len(TEMPLATES) == 8 and all("<*>" in t for t in TEMPLATES)


def test_token_json_round_trip(tmp_path):
    tok = PlaceholderToken("<*>", np.random.default_rng(0).standard_normal(5), "walks")
    tok.save(tmp_path / "t.json")
    back = PlaceholderToken.load(tmp_path / "t.json")
    np.testing.assert_array_equal(back.embedding, tok.embedding)
    assert back.word == tok.word and back.init_word == tok.init_word


def _exemplar(pipe):
    from motionrealign.motion import encode_features

    return encode_features(pipe.corpus.exemplars[0].motion, pipe.skeleton).data


@pytest.mark.parametrize("space", ["lead", "mld", "feat"])
def test_inversion_freezes_everything_but_v(tiny_pipe, space):
    before = tiny_pipe.digests()
    cfg = dataclasses.replace(tiny_pipe.config.inversion, loss_space=space, steps=3)
    res = invert_motion(tiny_pipe, [_exemplar(tiny_pipe)], cfg, 0)
    assert tiny_pipe.digests() == before
    assert len(res.losses) == 3 and np.isfinite(res.probe_after)
    assert not np.array_equal(res.token.embedding,
                              tiny_pipe.vocab.table[tiny_pipe.vocab.index[cfg.init_word]])
    assert all(p.requires_grad for p in tiny_pipe.vae.named_parameters().values())


def test_inversion_deterministic_and_generates(tiny_pipe):
    cfg = tiny_pipe.config.inversion
    ex = _exemplar(tiny_pipe)
    a = invert_motion(tiny_pipe, [ex], cfg, 4)
    b = invert_motion(tiny_pipe, [ex], cfg, 4)
    np.testing.assert_array_equal(a.token.embedding, b.token.embedding)
    out = generate_with_token(tiny_pipe, a.token, 0, 30, seed=1)
    assert out.shape == (30, 92) and np.all(np.isfinite(out))


def test_inversion_input_checks(tiny_pipe):
    with pytest.raises(ValueError):
        invert_motion(tiny_pipe, [], tiny_pipe.config.inversion)
    with pytest.raises(ValueError, match="shorter"):
        invert_motion(tiny_pipe, [_exemplar(tiny_pipe)[:10]], tiny_pipe.config.inversion)
    with pytest.raises(MissingStageError):
        invert_motion(new_pipeline(CFG), [_exemplar(tiny_pipe)], InversionConfig())
