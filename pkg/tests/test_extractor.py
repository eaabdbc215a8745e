import numpy as np
import pytest

from motionrealign.config import ExtractorConfig
from motionrealign.diffcore import grad_check, parameter
from motionrealign.evalkit.extractor import (FeatureExtractor, contrastive_loss, paired_margin,
                                             train_extractor)

CFG = ExtractorConfig(feature_dim=4, hidden_dim=8, layers=1, heads=2, epochs=3, batch_size=8)
D = 20


def _data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    feats = [rng.standard_normal((int(rng.integers(5, 15)), D)) for _ in range(n)]
    return feats, rng.standard_normal((n, 6))


def test_contrastive_loss_is_log_b_for_uniform_logits():
    f = np.tile([1.0, 0.0], (4, 1))
    assert float(contrastive_loss(parameter(f), parameter(f), 0.1).data) == pytest.approx(np.log(4))


def test_contrastive_gradient():
    feats, text = _data(4)
    model = FeatureExtractor(D, 6, CFG, 0)
    from motionrealign.motion import NormStats

    model.norm = NormStats(np.zeros(D), np.ones(D))

    def loss():
        return contrastive_loss(model.motion_features(feats), model.text_features(text), 0.5)

    assert grad_check(loss, model.named_parameters(), eps=1e-5, coords_per_block=6) < 1e-4


def test_features_unit_norm_and_padding_invariant():
    feats, text = _data(3)
    model = FeatureExtractor(D, 6, CFG, 0)
    from motionrealign.motion import NormStats

    model.norm = NormStats(np.zeros(D), np.ones(D))
    batch = model.embed_motions(feats)
    np.testing.assert_allclose(np.linalg.norm(batch, axis=1), 1.0)
    for f, b in zip(feats, batch):
        np.testing.assert_allclose(model.embed_motions([f])[0], b, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(model.embed_texts(text), axis=1), 1.0)


def test_needs_norm_stats():
    with pytest.raises(RuntimeError):
        FeatureExtractor(D, 6, CFG, 0).motion_features([np.zeros((4, D))])


def test_training_learns_pairing():
    rng = np.random.default_rng(0)
    proto = rng.standard_normal((4, D))
    labels = np.arange(32) % 4
    feats = [proto[k] + 0.1 * rng.standard_normal((8, D)) for k in labels]
    text = np.eye(6)[labels]
    caps = [str(k) for k in labels]
    res = train_extractor(feats, text, ExtractorConfig(feature_dim=4, hidden_dim=8, layers=1,
                                                       heads=2, epochs=30, batch_size=8),
                          0, caps)
    paired, other = paired_margin(res.extractor, feats, text, caps)
    assert paired - other > 0.3
    again = train_extractor(feats, text, res.extractor.cfg, 0, caps)
    assert again.extractor.digest() == res.extractor.digest()
