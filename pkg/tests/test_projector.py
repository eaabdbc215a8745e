import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motionrealign.config import ProjectorConfig
from motionrealign.diffcore import grad_check
from motionrealign.projector import (Projector, alignment_loss, alignment_margin,
                                     class_cluster_gap, loss_weights, projector_objective,
                                     realign, reconstruction_loss, relative_reconstruction_error,
                                     train_projector, variance_loss)

CFG = ProjectorConfig(hidden_dim=8, layers=1, heads=2, epochs=3, batch_size=8, dropout=0.0)


def test_alignment_extremes():
    c = np.array([[1.0, 2.0, -0.5]])
    assert float(alignment_loss(c * 3, c).data) == pytest.approx(0.0, abs=1e-12)
    orth = np.array([[2.0, -1.0, 0.0]])
    assert float(alignment_loss(orth, c).data) == pytest.approx(1.0, abs=1e-12)
    assert float(alignment_loss(-c, c).data) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ValueError):
        alignment_loss(np.zeros((1, 3)), c)


def test_reconstruction_loss():
    z = np.array([[1.0, 2.0], [0.0, 0.0]])
    assert float(reconstruction_loss(z, z).data) == 0.0
    assert float(reconstruction_loss(z, z + 1.0).data) == pytest.approx(2.0)


def test_variance_loss_oracles():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 3))
    assert float(variance_loss(x, x).data) == 0.0
    # moment-matched N(0,1) vs N(1,1) in one dimension
    a = np.array([[-1.0], [1.0]])
    assert float(variance_loss(a, a + 1.0).data) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        variance_loss(x[:1], x[:1])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (6, 2), elements=st.floats(-5, 5)))
def test_variance_loss_non_negative(a, b):
    assert float(variance_loss(a, b).data) >= -1e-12


def test_weights_follow_ablation_flags():
    assert loss_weights(CFG) == (2.1591, 4.7036, 0.0596)
    off = dataclasses.replace(CFG, no_align=True, no_rec=True, no_kl=True)
    assert loss_weights(off) == (0.0, 0.0, 0.0)


def _data(n=16, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 6)), rng.standard_normal((n, 5))


def test_objective_is_weighted_sum_and_differentiable():
    z, c = _data(4)
    model = Projector(6, 5, CFG, 0)
    total, parts = projector_objective(model, z, c, CFG)
    w = loss_weights(CFG)
    expect = w[0] * parts["align"] + w[1] * parts["rec"] + w[2] * parts["var"]
    assert float(total.data) == pytest.approx(expect, rel=1e-12)
    err = grad_check(lambda: projector_objective(model, z, c, CFG)[0], model.named_parameters(),
                     eps=1e-5, coords_per_block=6)
    assert err < 1e-4


def test_all_terms_ablated_leaves_parameters_unchanged():
    z, c = _data()
    off = dataclasses.replace(CFG, no_align=True, no_rec=True, no_kl=True)
    res = train_projector(z, c, off, 0)
    fresh = Projector(6, 5, off, 0)
    assert res.projector.digest() == fresh.digest()
    assert all(r["loss"] == 0.0 for r in res.log)


def test_shape_errors():
    model = Projector(6, 5, CFG, 0)
    with pytest.raises(ValueError):
        model.encode(np.zeros((2, 5)))
    with pytest.raises(ValueError):
        model.decode(np.zeros((2, 6)))


def test_realign_single_vector_and_batch_agree():
    model = Projector(6, 5, CFG, 0)
    z, _ = _data(3)
    batch = realign(model, z)
    np.testing.assert_allclose(realign(model, z[1]), batch[1], atol=1e-12)


def test_training_improves_and_diagnostics():
    z, c = _data(32)
    res = train_projector(z, c, dataclasses.replace(CFG, epochs=30), 0)
    assert res.log[-1]["loss"] < res.log[0]["loss"]
    caps = [str(i % 4) for i in range(32)]
    paired, mismatched = alignment_margin(res.projector, z, c, caps)
    assert -1 <= mismatched <= 1 and -1 <= paired <= 1
    assert relative_reconstruction_error(res.projector, z) >= 0
    assert np.isfinite(class_cluster_gap(res.projector, z, caps))
