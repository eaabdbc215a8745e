import numpy as np
import pytest

from motionrealign.config import VaeConfig
from motionrealign.diffcore import grad_check, parameter
from motionrealign.motion import MotionFeatures
from motionrealign.vae import (MotionVAE, decode_many, encode_means, length_batches, pad_batch,
                               reparameterize, train_vae, vae_decode, vae_encode, vae_loss)

CFG = VaeConfig(latent_dim=4, hidden_dim=8, layers=1, heads=2, epochs=1, batch_size=4,
                min_len=4, max_len=12)
D = 20


def _feats(n=8, seed=0):
    rng = np.random.default_rng(seed)
    return [MotionFeatures(rng.standard_normal((int(rng.integers(4, 13)), D)), 1) for _ in range(n)]


def test_loss_trivial_cases():
    x = np.ones((2, 3, D))
    zero = parameter(np.zeros((2, 4)))
    total, mse, kl = vae_loss(x, parameter(x.copy()), zero, zero, 1.0)
    assert float(total.data) == 0.0
    _, _, kl = vae_loss(x[:1, :, :1], parameter(x[:1, :, :1]), parameter(np.ones((1, 1))),
                        parameter(np.zeros((1, 1))), 1e-4)
    assert float(kl.data) == 0.5
    with pytest.raises(ValueError):
        vae_loss(x, parameter(x[:, :2]), zero, zero, 1.0)


def test_masked_mse_ignores_padding():
    x = np.zeros((1, 4, 2))
    x_hat = np.zeros((1, 4, 2))
    x_hat[0, 3] = 100.0
    mask = np.array([[True, True, True, False]])
    z = parameter(np.zeros((1, 2)))
    _, mse, _ = vae_loss(x, parameter(x_hat), z, z, 0.0, mask)
    assert float(mse.data) == 0.0


def test_reparameterization_gradient():
    mu = parameter(np.array([0.3, -1.0]))
    logvar = parameter(np.array([0.1, -0.4]))
    eps = np.array([0.7, -1.3])
    err = grad_check(lambda: (reparameterize(mu, logvar, eps) ** 2).sum(),
                     {"mu": mu, "logvar": logvar}, eps=1e-5)
    assert err < 1e-6


def test_full_loss_gradient():
    model = MotionVAE(D, CFG, 0)
    x, mask = pad_batch([f.data for f in _feats(3)])
    eps = np.random.default_rng(1).standard_normal((3, CFG.latent_dim))

    def loss():
        mu, logvar = model.encode(x, mask)
        x_hat = model.decode(reparameterize(mu, logvar, eps), mask)
        return vae_loss(x, x_hat, mu, logvar, 0.1, mask)[0]

    assert grad_check(loss, model.named_parameters(), eps=1e-5, coords_per_block=6) < 1e-4


@pytest.mark.parametrize("n", [4, 7, 12])
def test_latent_dim_independent_of_length(n):
    model = MotionVAE(D, CFG, 0)
    mu, logvar, z = vae_encode(model, np.zeros((n, D)))
    assert mu.shape == logvar.shape == z.shape == (4,)
    assert vae_decode(model, z, n).shape == (n, D)


def test_length_limits():
    model = MotionVAE(D, CFG, 0)
    with pytest.raises(ValueError):
        vae_decode(model, np.zeros(4), 3)
    with pytest.raises(ValueError):
        model.encode(np.zeros((1, 13, D)), np.ones((1, 13), bool))
    with pytest.raises(ValueError):
        vae_encode(model, np.zeros((5, D)), mode="median")


def test_sample_mode_is_seeded():
    model = MotionVAE(D, CFG, 0)
    x = np.random.default_rng(0).standard_normal((6, D))
    a = vae_encode(model, x, "sample", 3)[2]
    b = vae_encode(model, x, "sample", 3)[2]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, vae_encode(model, x, "mean")[2])


def test_batched_encode_matches_single():
    model = MotionVAE(D, CFG, 0)
    seqs = [f.data for f in _feats(5)]
    batched = encode_means(model, seqs, batch_size=2)
    for s, z in zip(seqs, batched):
        np.testing.assert_allclose(vae_encode(model, s)[0], z, atol=1e-12)
    out = decode_many(model, batched, [len(s) for s in seqs], batch_size=3)
    for s, z, o in zip(seqs, batched, out):
        np.testing.assert_allclose(vae_decode(model, z, len(s)), o, atol=1e-12)


def test_length_batches_cover_everything():
    batches = length_batches([5, 3, 9, 4, 7, 2, 8], 3, np.random.default_rng(0))
    assert sorted(np.concatenate(batches).tolist()) == list(range(7))


def test_training_deterministic_and_improves():
    feats = _feats(16)
    cfg3 = VaeConfig(**{**CFG.__dict__, "epochs": 3})
    a = train_vae(feats, cfg3, 0)
    b = train_vae(feats, cfg3, 0)
    assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]
    assert a.log[-1]["loss"] < a.log[0]["loss"]
    assert all(r["kl"] < 1e4 for r in a.log)
    with pytest.raises(ValueError):
        train_vae([], CFG)
