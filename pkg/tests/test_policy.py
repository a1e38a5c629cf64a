"""Policy tests: score fusion, the local-to-global lift, gating, and
action selection rules."""
import numpy as np
import pytest

from susa import policy
from susa import tensor as T

D = 8


def _cands(*pairs):
    return [{"kind": "move", "node_id": n, "view_index": v} for n, v in pairs]


def test_branch_scores_shape():
    rng = np.random.default_rng(0)
    p = policy.init_policy(rng, D)
    feats = T.constant(rng.standard_normal((5, D)))
    out = policy.branch_scores(p["score_sem"], feats)
    assert out.shape == (5,)


def test_fuse_pair_weighted_sum_and_shape_guard():
    a = T.constant(np.array([1.0, 2.0]))
    b = T.constant(np.array([10.0, 20.0]))
    w1 = T.constant(np.array([0.25]))
    w2 = T.constant(np.array([0.75]))
    np.testing.assert_allclose(policy.fuse_pair(a, b, w1, w2).data, [7.75, 15.5])
    with pytest.raises(T.ShapeError):
        policy.fuse_pair(a, T.constant(np.zeros(3)), w1, w2)


def test_local_to_global_max_over_facing_views():
    # p_local rows: [stop, view0, view1, view2]
    p_local = T.constant(np.array([5.0, 1.0, 3.0, 2.0]))
    bt = T.constant(np.array([-4.0]))
    cands = _cands((7, 0), (7, 1), (9, 2))  # node 7 faces views 0 and 1
    out = policy.local_to_global(p_local, cands, [7, 9, 11], bt)
    # stop passes through; node 7 = max(1,3); node 9 = view2; node 11 = backtrack
    np.testing.assert_array_equal(out.data, [5.0, 3.0, 2.0, -4.0])


def test_local_to_global_gradient_routes_to_argmax_view():
    p_local = T.param(np.array([0.0, 1.0, 3.0, 2.0]))
    bt = T.param(np.array([-1.0]))
    cands = _cands((7, 0), (7, 1))
    with T.Tape():
        out = policy.local_to_global(p_local, cands, [7, 8], bt)
        T.backward(T.sum_(out))
    # stop + the winning view (index 2) receive gradient; losing view none
    np.testing.assert_array_equal(p_local.grad, [1.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(bt.grad, [1.0])


def test_dynamic_fuse_gate_convexity():
    rng = np.random.default_rng(1)
    p = policy.init_policy(rng, D)
    a = T.constant(np.array([1.0, 0.0, 2.0]))
    b = T.constant(np.array([0.0, 4.0, 2.0]))
    hyb = T.constant(rng.standard_normal(D))
    fused, gate = policy.dynamic_fuse(p, a, b, hyb)
    g = float(gate.data[0])
    assert 0.0 < g < 1.0
    np.testing.assert_allclose(fused.data, g * a.data + (1 - g) * b.data, atol=1e-12)


def test_select_action_greedy_tie_rules():
    # exact tie between two nodes: lowest node id wins
    assert policy.select_action(np.array([0.2, 0.4, 0.4]), [None, 3, 7]) == 3
    assert policy.select_action(np.array([0.2, 0.4, 0.4]), [None, 9, 4]) == 4
    # stop ranks below every node id, so it wins exact ties
    assert policy.select_action(np.array([0.5, 0.5]), [None, 2]) is None
    # strict node maximum wins over stop
    assert policy.select_action(np.array([0.4, 0.6]), [None, 2]) == 2


def test_select_action_sample_is_deterministic_given_rng():
    probs = np.array([0.1, 0.2, 0.7])
    ids = [None, 4, 6]
    picks1 = [policy.select_action(probs, ids, mode="sample",
                                   rng=np.random.default_rng(5)) for _ in range(3)]
    picks2 = [policy.select_action(probs, ids, mode="sample",
                                   rng=np.random.default_rng(5)) for _ in range(3)]
    assert picks1 == picks2
    with pytest.raises(ValueError):
        policy.select_action(probs, ids, mode="sample")
    with pytest.raises(ValueError):
        policy.select_action(probs, ids, mode="beam")


def test_select_action_sample_hits_all_support():
    rng = np.random.default_rng(11)
    probs = np.array([0.3, 0.3, 0.4])
    ids = [None, 1, 2]
    seen = {policy.select_action(probs, ids, mode="sample", rng=rng)
            for _ in range(200)}
    assert seen == {None, 1, 2}


def test_box_geometry_center_and_size():
    assert policy._box_geometry([0.0, 0.0, 2.0, 4.0]) == [1.0, 2.0, 2.0, 4.0]
