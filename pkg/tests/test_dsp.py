"""Exploration-map and graph-aware encoder tests: visited/frontier feature
fixtures, idempotence, bucketing, and distance-bias boundaries."""
import types

import numpy as np
import pytest

from susa import dsp, nn
from susa import tensor as T

D = 8


def _stub_world(n=4):
    return types.SimpleNamespace(panoramas={i: None for i in range(n)})


def _move(nb, view):
    return {"kind": "move", "node_id": nb, "view_index": view}


STOP = {"kind": "stop"}


def _pano(seed, n_views=3):
    return T.constant(np.random.default_rng(seed).standard_normal((n_views, D)))


def test_update_map_visited_mean_and_frontier_facing():
    world = _stub_world()
    emap = dsp.ExplorationMap()
    pano = _pano(0)
    dsp.update_map(emap, world, 0, pano, [STOP, _move(1, 2)])
    assert emap.status == {0: "visited", 1: "frontier"}
    np.testing.assert_allclose(emap.visited_feat[0].data[0],
                               pano.data.mean(axis=0))
    np.testing.assert_array_equal(emap.frontier_obs[1][0].data[0], pano.data[2])


def test_update_map_is_idempotent():
    world = _stub_world()
    emap = dsp.ExplorationMap()
    pano = _pano(1)
    cands = [STOP, _move(1, 0), _move(2, 1)]
    dsp.update_map(emap, world, 0, pano, cands)
    snap1 = emap.snapshot()
    rows1 = emap.feature_rows(T.constant(np.zeros(D))).data.copy()
    dsp.update_map(emap, world, 0, pano, cands)
    assert emap.snapshot() == snap1
    np.testing.assert_array_equal(
        emap.feature_rows(T.constant(np.zeros(D))).data, rows1)


def test_frontier_mean_over_contributors_and_cache_invalidation():
    world = _stub_world()
    emap = dsp.ExplorationMap()
    pano0, pano1 = _pano(2), _pano(3)
    dsp.update_map(emap, world, 0, pano0, [STOP, _move(1, 0), _move(2, 1)])
    # populate the cached frontier means, then add a second contributor
    emap.feature_rows(T.constant(np.zeros(D)))
    dsp.update_map(emap, world, 1, pano1, [STOP, _move(0, 0), _move(2, 2)])
    rows = emap.feature_rows(T.constant(np.zeros(D))).data
    # map order: 0 (visited), 1 (visited), 2 (frontier from nodes 0 and 1)
    expect2 = (pano0.data[1] + pano1.data[2]) / 2.0
    np.testing.assert_allclose(rows[3], expect2, atol=1e-12)
    # node 1 flipped frontier -> visited: its frontier bookkeeping is gone
    assert 1 not in emap.frontier_obs and emap.status[1] == "visited"
    np.testing.assert_allclose(rows[2], pano1.data.mean(axis=0))


def test_feature_rows_stop_first_in_map_order():
    world = _stub_world()
    emap = dsp.ExplorationMap()
    stop = T.constant(np.full(D, 7.0))
    dsp.update_map(emap, world, 0, _pano(4), [STOP, _move(1, 0)])
    rows = emap.feature_rows(stop)
    assert rows.shape == (3, D)
    np.testing.assert_array_equal(rows.data[0], stop.data)


def test_distance_matrix_places_stop_at_current_node():
    world = _stub_world()
    emap = dsp.ExplorationMap()
    dsp.update_map(emap, world, 0, _pano(5), [STOP, _move(1, 0)])
    geo = np.arange(16.0).reshape(4, 4)
    dist = emap.distance_matrix(geo)
    np.testing.assert_array_equal(dist, geo[np.ix_([0, 0, 1], [0, 0, 1])])


def test_update_map_rejects_unknown_node():
    with pytest.raises(KeyError):
        dsp.update_map(dsp.ExplorationMap(), _stub_world(2), 9, _pano(6), [STOP])


def test_bucketize_edge_fixture():
    d = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 4.0, 7.9, 8.0, 16.0, 100.0])
    np.testing.assert_array_equal(dsp.bucketize(d),
                                  [0, 0, 1, 1, 2, 3, 3, 4, 5, 5])


def test_zero_distance_bias_matches_plain_attention():
    rng = np.random.default_rng(7)
    gasa = dsp.init_gasa(rng, D, layers=1)
    layer = gasa["layers"]["0"]
    x = T.constant(np.random.default_rng(8).standard_normal((5, D)))
    dist = np.abs(np.random.default_rng(9).standard_normal((5, 5))) * 6
    out_biased = dsp.gasa_layer(layer, x, dist)
    out_plain = nn.attention_residual_ln(layer["gasa"], layer["ln_gasa"], x)
    # bias table is zero-initialized: the additive logit bias vanishes exactly
    np.testing.assert_array_equal(out_biased.data, out_plain.data)
    layer["dist_bias"].data[:] = np.arange(6.0)
    assert not np.allclose(dsp.gasa_layer(layer, x, dist).data, out_plain.data)


def test_gasa_layer_rejects_mismatched_distance_shape():
    rng = np.random.default_rng(10)
    layer = dsp.init_gasa(rng, D, layers=1)["layers"]["0"]
    with pytest.raises(T.ShapeError):
        dsp.gasa_layer(layer, T.constant(np.zeros((3, D))), np.zeros((2, 2)))


def test_cross_encode_kv_cache_is_exact():
    rng = np.random.default_rng(11)
    p = dsp.init_gasa(rng, D, layers=2)
    feats = T.constant(np.random.default_rng(12).standard_normal((4, D)))
    instr = T.constant(np.random.default_rng(13).standard_normal((6, D)))
    dist = np.abs(np.random.default_rng(14).standard_normal((4, 4))) * 3
    plain = dsp.cross_encode(p, feats, instr, dist)
    kv = dsp.instruction_kv(p, instr)
    cached = dsp.cross_encode(p, feats, instr, dist, kv_cache=kv)
    np.testing.assert_array_equal(plain.data, cached.data)
