"""Textual semantic selection tests: static cosine matching, the
delta-combination boundaries, and dynamic cross-attention caching."""
import numpy as np
import pytest

from susa import tsu
from susa import tensor as T

D = 8


def test_static_match_hand_fixture():
    # semantics rows chosen so cosines are exactly computable
    sem = T.constant(np.array([[1.0, 0.0], [0.0, 2.0]]))
    instr = T.constant(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, -1.0]]))
    out = tsu.static_match(sem, instr)
    # row 0: max(1, 1/sqrt(2), 0) = 1 ; row 1: max(0, 1/sqrt(2), -1)
    assert np.allclose(out.data, [1.0, 1.0 / np.sqrt(2.0)], atol=1e-12)


def test_combine_delta_one_is_pure_static_gating():
    rng = np.random.default_rng(0)
    sem = T.constant(rng.standard_normal((3, D)))
    g_stat = T.constant(rng.standard_normal(3))
    g_dyn = T.constant(rng.standard_normal((3, D)))
    out = tsu.combine(sem, g_stat, g_dyn, 1.0)
    expect = sem.data * g_stat.data[:, None]
    assert np.array_equal(out.data, expect)


def test_combine_delta_zero_is_pure_dynamic():
    rng = np.random.default_rng(1)
    sem = T.constant(rng.standard_normal((3, D)))
    g_stat = T.constant(rng.standard_normal(3))
    g_dyn = T.constant(rng.standard_normal((3, D)))
    out = tsu.combine(sem, g_stat, g_dyn, 0.0)
    assert np.array_equal(out.data, g_dyn.data)


def test_combine_rejects_out_of_range_delta():
    sem = T.constant(np.ones((2, D)))
    g = T.constant(np.ones(2))
    dyn = T.constant(np.ones((2, D)))
    for bad in (-0.1, 1.5):
        with pytest.raises(ValueError):
            tsu.combine(sem, g, dyn, bad)


def test_combine_tensor_delta_matches_float_path():
    rng = np.random.default_rng(2)
    sem = T.constant(rng.standard_normal((4, D)))
    g_stat = T.constant(rng.standard_normal(4))
    g_dyn = T.constant(rng.standard_normal((4, D)))
    out_f = tsu.combine(sem, g_stat, g_dyn, 0.3)
    out_t = tsu.combine(sem, g_stat, g_dyn, T.constant(0.3))
    assert np.allclose(out_f.data, out_t.data, atol=1e-15)


def test_adaptive_delta_is_sigmoid():
    raw = T.constant(0.7)
    assert np.allclose(tsu.adaptive_delta(raw).data, 1.0 / (1.0 + np.exp(-0.7)))


def test_dynamic_match_kv_cache_is_exact():
    rng = np.random.default_rng(3)
    tca = tsu.init_tca(rng, D)
    sem = T.constant(rng.standard_normal((5, D)))
    instr = T.constant(rng.standard_normal((7, D)))
    plain = tsu.dynamic_match(tca, sem, instr)
    kv = tsu.instruction_kv(tca, instr)
    cached = tsu.dynamic_match(tca, sem, instr, kv_cache=kv)
    assert np.array_equal(plain.data, cached.data)


def test_dynamic_match_gradients_flow_to_tca_params():
    rng = np.random.default_rng(4)
    tca = tsu.init_tca(rng, D)
    sem = T.constant(rng.standard_normal((3, D)))
    instr = T.constant(rng.standard_normal((4, D)))
    with T.Tape():
        out = tsu.dynamic_match(tca, sem, instr)
        T.backward(T.sum_(T.mul(out, out)))
    w = tca["0"]["cross_attn"]["q"]["W"]
    assert w.grad is not None and np.abs(w.grad).max() > 0
