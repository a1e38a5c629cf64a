"""Fusion tests: attention pooling, fusion-weight boundaries, hybrid
embedding, and contrastive-loss identities."""
import numpy as np
import pytest

from susa import hrf
from susa import tensor as T

D = 8


def test_attn_pool_single_row_is_tanh_of_row():
    h = T.constant(np.random.default_rng(0).standard_normal((1, D)))
    v = T.constant(np.random.default_rng(1).standard_normal(D))
    out = hrf.attn_pool(h, v)
    np.testing.assert_allclose(out.data, np.tanh(h.data[0]), atol=1e-15)


def test_attn_pool_identical_rows_collapse():
    row = np.random.default_rng(2).standard_normal(D)
    h = T.constant(np.tile(row, (4, 1)))
    v = T.constant(np.random.default_rng(3).standard_normal(D))
    out = hrf.attn_pool(h, v)
    np.testing.assert_allclose(out.data, np.tanh(row), atol=1e-12)


def test_attn_pool_rejects_empty():
    with pytest.raises(T.ShapeError):
        hrf.attn_pool(T.constant(np.zeros((0, D))), T.constant(np.zeros(D)))


def test_fusion_weights_zero_init_is_exact_quarter():
    rng = np.random.default_rng(4)
    p = hrf.init_hrf(rng, D)
    for lin in ("fc1", "fc2"):
        p["beta_ffn"][lin]["W"].data[:] = 0.0
        p["beta_ffn"][lin]["b"].data[:] = 0.0
    stop_rows = {s: T.constant(rng.standard_normal(D)) for s in hrf.STREAMS}
    beta = hrf.fusion_weights(p, stop_rows)
    # zero logits -> sigmoid 0.5 each -> L1 normalization gives exactly 1/4
    assert beta.data.tolist() == [0.25, 0.25, 0.25, 0.25]


def test_fusion_weights_unnormalized_are_sigmoids_summing_freely():
    rng = np.random.default_rng(5)
    p = hrf.init_hrf(rng, D)
    stop_rows = {s: T.constant(rng.standard_normal(D)) for s in hrf.STREAMS}
    raw = hrf.fusion_weights(p, stop_rows, normalize=False)
    norm = hrf.fusion_weights(p, stop_rows, normalize=True)
    assert np.all((raw.data > 0) & (raw.data < 1))
    np.testing.assert_allclose(norm.data, raw.data / raw.data.sum(), atol=1e-15)
    np.testing.assert_allclose(norm.data.sum(), 1.0, atol=1e-12)


def test_hybrid_embed_is_weighted_sum():
    rng = np.random.default_rng(6)
    pooled = {s: T.constant(rng.standard_normal(D)) for s in hrf.STREAMS}
    beta = T.constant(np.array([0.1, 0.2, 0.3, 0.4]))
    out = hrf.hybrid_embed(pooled, beta)
    expect = sum(b * pooled[s].data
                 for b, s in zip(beta.data, hrf.STREAMS))
    np.testing.assert_allclose(out.data, expect, atol=1e-15)


def test_contrastive_loss_single_pair_is_zero():
    rng = np.random.default_rng(7)
    emb = T.constant(rng.standard_normal((1, D)))
    instr = T.constant(rng.standard_normal((1, D)))
    assert hrf.contrastive_loss(emb, instr).data == 0.0


def test_contrastive_loss_indistinguishable_pairs_is_ln_b():
    # identical embedding rows make every similarity equal, so both
    # softmaxes are uniform and the loss is exactly ln(B)
    row = np.random.default_rng(8).standard_normal(D)
    emb = T.constant(np.tile(row, (3, 1)))
    instr = T.constant(np.random.default_rng(9).standard_normal((3, D)))
    # instruction rows identical too, to equalize the column softmax
    instr = T.constant(np.tile(instr.data[0], (3, 1)))
    loss = hrf.contrastive_loss(emb, instr)
    np.testing.assert_allclose(loss.data, np.log(3.0), atol=1e-12)


def test_contrastive_loss_prefers_aligned_diagonal():
    rng = np.random.default_rng(10)
    base = rng.standard_normal((4, D))
    aligned = hrf.contrastive_loss(T.constant(base), T.constant(base.copy()))
    shuffled = hrf.contrastive_loss(T.constant(base),
                                    T.constant(base[[1, 0, 3, 2]]))
    assert aligned.data < shuffled.data


def test_contrastive_loss_input_validation():
    ok = T.constant(np.zeros((2, D)))
    with pytest.raises(ValueError):
        hrf.contrastive_loss(ok, ok, temperature=0.0)
    with pytest.raises(T.ShapeError):
        hrf.contrastive_loss(ok, T.constant(np.zeros((3, D))))
