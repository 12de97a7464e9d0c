import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnigraph.aggregation import (KNOWLEDGE_META_PATHS, META_PATH_REL, AttentionLayer, MetaPath,
                                   attention_scores, derive_meta_paths, knn_pairs, message_edges,
                                   meta_path_neighbors, neighbor_pairs, pool_and_readout,
                                   random_meta_paths, reach_table)
from omnigraph.core import Tensor
from omnigraph.hetgraph import REL_TABLE, HetGraph, Modality, Relation, cosine_similarity
from oracles import attention_oracle, brute_neighbors, grad_rel_error, random_graph

G, I, C, T = (int(m) for m in Modality)


# meta-paths --------------------------------------------------------------------

def _enumerate_paths(relations, max_hops=2):
    """Every attribute path of 1..max_hops cross-modal steps without revisits."""
    allowed = {Relation.parse(r) for r in relations} - {Relation.INTRA_MODAL}
    out = set()
    for k in range(1, max_hops + 1):
        for seq in itertools.permutations(range(4), k + 1):
            rels = tuple(REL_TABLE[a, b] for a, b in zip(seq, seq[1:]))
            if all(r >= 0 and Relation(r) in allowed for r in rels):
                out.add(tuple(seq))
    return out


def test_full_relations_contain_knowledge_paths():
    found = {tuple(int(a) for a in p.attrs) for p in derive_meta_paths(rng=np.random.default_rng(0))}
    for p in KNOWLEDGE_META_PATHS:
        assert tuple(int(a) for a in p.attrs) in found


def test_express_only():
    found = {tuple(int(a) for a in p.attrs) for p in derive_meta_paths(["express"], np.random.default_rng(0))}
    assert found == {(G, I), (I, G)}


def test_walks_equal_exhaustive_enumeration():
    found = {tuple(int(a) for a in p.attrs) for p in derive_meta_paths(rng=np.random.default_rng(3), n_walks=1000)}
    assert found == _enumerate_paths(list(Relation))
    for rels in (["express", "depict"], ["atomize"], ["depict", "atomize"]):
        got = {tuple(int(a) for a in p.attrs) for p in derive_meta_paths(rels, np.random.default_rng(1))}
        assert got == _enumerate_paths(rels)


def test_derived_paths_are_valid():
    for p in derive_meta_paths(rng=np.random.default_rng(2)):
        assert p.is_valid() and 1 <= p.hops <= 2


def test_metapath_guards():
    with pytest.raises(ValueError):
        MetaPath((Modality.G,), ())
    assert str(MetaPath.of("G", "I", "C")) == "G-express->I-atomize->C"
    assert not MetaPath.of("G", "C").is_valid()


def test_random_meta_paths_shape():
    paths = random_meta_paths(np.random.default_rng(0))
    assert len(paths) == 4
    assert all(len(set(p.attrs)) == 3 for p in paths)


# neighbours --------------------------------------------------------------------

def _graph(attrs, seed=0):
    return random_graph(np.random.default_rng(seed), attrs=np.array(attrs))


def test_g_target_two_hops():
    g = _graph([G, G, I, I, C, T])
    assert meta_path_neighbors(g, 0, KNOWLEDGE_META_PATHS, 2) == {1, 2, 3, 4, 5}


def test_c_target_one_hop():
    g = _graph([G, I, I, C, C, T])
    assert meta_path_neighbors(g, 3, KNOWLEDGE_META_PATHS, 1) == {1, 2, 4}


def test_empty_paths_give_intra_modal_only():
    g = _graph([G, G, I, T])
    assert meta_path_neighbors(g, 0, [], 2) == {1}
    assert meta_path_neighbors(g, 2, [], 2) == set()


def test_neighbor_errors():
    g = _graph([G, I])
    with pytest.raises(ValueError):
        meta_path_neighbors(g, 5, KNOWLEDGE_META_PATHS)
    with pytest.raises(ValueError):
        reach_table(KNOWLEDGE_META_PATHS, 3)


def test_reach_includes_intermediate_attributes():
    reach = reach_table(KNOWLEDGE_META_PATHS, 2)
    assert reach[G, I] and reach[G, C] and reach[G, T]
    assert reach[C, I] and reach[C, G] and not reach[C, T]
    assert reach[I].tolist() == [False, True, False, False]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2]))
def test_neighbors_match_bruteforce(seed, hops):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n_max=12)
    paths = KNOWLEDGE_META_PATHS if rng.random() < 0.5 else random_meta_paths(rng)
    for v in range(g.n_nodes):
        assert meta_path_neighbors(g, v, paths, hops) == brute_neighbors(g.attrs, v, paths, hops)


def test_neighbor_pairs_agree_with_per_node_sets():
    g = random_graph(np.random.default_rng(4), n_min=8, n_max=10)
    src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(KNOWLEDGE_META_PATHS, 2))
    for v in range(g.n_nodes):
        assert set(src[dst == v].tolist()) == meta_path_neighbors(g, v, KNOWLEDGE_META_PATHS, 2)


def test_message_edges_path_edges_switch():
    g = _graph([G, I, C])
    src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(KNOWLEDGE_META_PATHS, 2))
    msg = message_edges(g, src, dst, path_edges=True)
    gc = (g.attrs[msg.src] == C) & (g.attrs[msg.dst] == G)
    assert gc.sum() == 1 and msg.rel[gc][0] == META_PATH_REL
    x = g.features.data
    assert msg.weights.data[gc][0] == pytest.approx(cosine_similarity(x[2], x[0]))
    with pytest.raises(ValueError, match="neighbor without relation"):
        message_edges(g, src, dst, path_edges=False)


def test_knn_pairs():
    g = random_graph(np.random.default_rng(5), n_min=20, n_max=20)
    src, dst = knn_pairs(g, 15)
    assert np.all(np.bincount(dst, minlength=g.n_nodes) == 15)
    x = g.features.data
    t = 0
    chosen = set(src[dst == t].tolist())
    sims = sorted(((cosine_similarity(x[s], x[t]), s) for s in range(g.n_nodes) if s != t), reverse=True)
    assert chosen == {s for _, s in sims[:15]}


# attention ---------------------------------------------------------------------

def _layer(d=4, heads=2, seed=0, bias=False, **kw):
    layer = AttentionLayer(d, heads, np.random.default_rng(seed), bias=bias, **kw)
    rng = np.random.default_rng(seed + 100)
    layer.w_rel.data[...] = rng.normal(size=layer.w_rel.shape)
    layer.b_rel.data[...] = rng.normal(size=layer.b_rel.shape)
    if bias:
        for b in (layer.bk, layer.bq, layer.bv):
            b.data[...] = rng.normal(size=b.shape)
    return layer


def _oracle_edges(g, paths=KNOWLEDGE_META_PATHS, hops=2):
    x = g.features.data
    edges = []
    for t in range(g.n_nodes):
        for s in sorted(brute_neighbors(g.attrs, t, paths, hops)):
            r = REL_TABLE[g.attrs[s], g.attrs[t]]
            edges.append((s, t, int(r) if r >= 0 else META_PATH_REL, cosine_similarity(x[s], x[t])))
    return edges


def _run_layer(g, layer):
    src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(KNOWLEDGE_META_PATHS, 2))
    msg = message_edges(g, src, dst)
    return layer(g.features, g.attrs, msg), layer.attention(g.features, g.attrs, msg), msg


@pytest.mark.parametrize("bias", [False, True])
def test_layer_matches_nested_loop_oracle(bias):
    for k in range(10):
        rng = np.random.default_rng([7, k])
        g = random_graph(rng, n_min=6, n_max=6, d=4)
        layer = _layer(seed=k, bias=bias)
        out, alpha, msg = _run_layer(g, layer)
        want, want_alpha = attention_oracle(g.features.data, g.attrs, _oracle_edges(g), layer)
        np.testing.assert_allclose(out.data, want, atol=1e-9, rtol=0)
        for e in range(len(msg)):
            np.testing.assert_allclose(alpha.data[e], want_alpha[(msg.src[e], msg.dst[e])], atol=1e-9)


def test_sra_rows_sum_to_one():
    g = random_graph(np.random.default_rng(8), n_min=10, n_max=10)
    _, alpha, msg = _run_layer(g, _layer())
    sums = np.zeros((g.n_nodes, 2))
    np.add.at(sums, msg.dst, alpha.data)
    has = np.bincount(msg.dst, minlength=g.n_nodes) > 0
    np.testing.assert_allclose(sums[has], 1.0, atol=1e-9)


def test_identical_neighbors_get_uniform_weights():
    x = Tensor(np.array([[1.0, 0.5, -0.2, 0.3]] * 4))
    from omnigraph.hetgraph import edges_for
    attrs = np.array([I, G, G, G])
    g = HetGraph(attrs, x, *edges_for(attrs, x))
    w = attention_scores(g, 0, [1, 2, 3], _layer())
    np.testing.assert_allclose(w, 1 / 3, atol=1e-12)


def test_three_neighbor_scores_direct():
    g = random_graph(np.random.default_rng(9), attrs=np.array([T, I, T, T]))
    layer = _layer(seed=3)
    w = attention_scores(g, 1, [0, 2, 3], layer)
    x = g.features.data
    edges = [(s, 1, int(Relation.DEPICT), cosine_similarity(x[s], x[1])) for s in (0, 2, 3)]
    _, alpha = attention_oracle(x, g.attrs, edges, layer)
    np.testing.assert_allclose(w, [alpha[(s, 1)] for s in (0, 2, 3)], atol=1e-12)


def test_attention_scores_missing_edge():
    g = random_graph(np.random.default_rng(10), attrs=np.array([G, C, I]))
    with pytest.raises(ValueError, match="neighbor without relation"):
        attention_scores(g, 0, [1, 2], _layer())
    assert attention_scores(g, 0, [1, 2], _layer(), path_edges=True).shape == (2, 2)


def test_score_shift_invariance():
    from omnigraph.core import segment_softmax
    rng = np.random.default_rng(11)
    s = rng.normal(size=(6, 2))
    dst = np.array([0, 0, 1, 1, 1, 2])
    shift = rng.normal(size=(3, 2))[dst]
    a = segment_softmax(Tensor(s), dst, 3).data
    b = segment_softmax(Tensor(s + shift), dst, 3).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_single_neighbor_output_is_value_projection():
    g = random_graph(np.random.default_rng(12), attrs=np.array([I, T]))
    layer = _layer(seed=5)
    from omnigraph.aggregation import MessageEdges
    msg = MessageEdges(np.array([1]), np.array([0]), np.array([1]), Tensor([0.3]), 2)
    out = layer(g.features, g.attrs, msg).data
    v = layer.project(g.features, g.attrs, layer.wv, layer.bv).data
    np.testing.assert_allclose(out[0], v[1], atol=1e-12)
    np.testing.assert_array_equal(out[1], g.features.data[1])  # no incoming messages


def test_two_identical_neighbors_give_common_value():
    x = Tensor(np.array([[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0], [1.0, -1.0, 0.5, 0.0]]))
    attrs = np.array([I, T, T])
    layer = _layer(seed=6)
    from omnigraph.aggregation import MessageEdges
    msg = MessageEdges(np.array([1, 2]), np.array([0, 0]), np.array([1, 1]), Tensor([0.2, 0.2]), 3)
    out = layer(x, attrs, msg).data
    v = layer.project(x, attrs, layer.wv, layer.bv).data
    np.testing.assert_allclose(out[0], v[1], atol=1e-12)


def test_layer_dim_mismatch():
    g = random_graph(np.random.default_rng(13), attrs=np.array([I, T]), d=6)
    src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(KNOWLEDGE_META_PATHS, 2))
    with pytest.raises(ValueError):
        _layer(d=4)(g.features, g.attrs, message_edges(g, src, dst))
    with pytest.raises(ValueError):
        AttentionLayer(5, 2, np.random.default_rng(0))


def test_permutation_equivariance():
    rng = np.random.default_rng(14)
    g = random_graph(rng, n_min=8, n_max=8)
    layer = _layer(seed=7)
    out, _, _ = _run_layer(g, layer)
    perm = rng.permutation(g.n_nodes)
    out_p, _, _ = _run_layer(g.permuted(perm), layer)
    np.testing.assert_allclose(out_p.data[perm], out.data, atol=1e-12)


def test_tied_kv_uses_key_weights():
    layer = AttentionLayer(4, 2, np.random.default_rng(0), tie_kv=True)
    assert layer.wv is layer.wk
    assert len(layer.parameters()) == len(AttentionLayer(4, 2, np.random.default_rng(0)).parameters()) - 1


def test_attention_layer_gradients():
    """Finite differences through projections, edge keys, segment softmax and values."""
    for k in range(3):
        rng = np.random.default_rng([15, k])
        g = random_graph(rng, n_min=6, n_max=6, d=4)
        layer = _layer(seed=k, bias=True)
        src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(KNOWLEDGE_META_PATHS, 2))
        msg = message_edges(g, src, dst)
        c = Tensor(rng.normal(size=(6, 4)))

        def fn(x, wk, wq, wv, w_rel, b_rel):
            layer.wk, layer.wq, layer.wv, layer.w_rel, layer.b_rel = wk, wq, wv, w_rel, b_rel
            return (layer(x, g.attrs, msg) * c).sum()
        arrays = [g.features.data, layer.wk.data, layer.wq.data, layer.wv.data,
                  layer.w_rel.data, layer.b_rel.data]
        assert grad_rel_error(fn, [a.copy() for a in arrays]) < 1e-4


# pooling -----------------------------------------------------------------------

def test_pool_identical_features():
    x = Tensor(np.tile([1.0, 2.0], (5, 1)))
    protos, present, readout = pool_and_readout(x, np.array([0, 0, 1, 3, 3]), np.zeros(5, int), 1)
    np.testing.assert_allclose(readout.data[0], [1, 2])
    np.testing.assert_array_equal(present[0], [True, True, False, True])
    np.testing.assert_allclose(protos.data[0, present[0]], np.tile([1, 2], (3, 1)))


def test_pool_two_modalities_mean_of_prototypes():
    x = Tensor(np.array([[1.0], [3.0], [10.0]]))
    _, _, readout = pool_and_readout(x, np.array([0, 0, 2]), np.zeros(3, int), 1)
    assert readout.data[0, 0] == pytest.approx((2.0 + 10.0) / 2)


def test_pool_permutation_invariant():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(9, 3))
    types = rng.integers(0, 4, size=9)
    gi = np.array([0] * 4 + [1] * 5)
    perm = rng.permutation(9)
    a = pool_and_readout(Tensor(x), types, gi, 2)
    b = pool_and_readout(Tensor(x[perm]), types[perm], gi[perm], 2)
    np.testing.assert_allclose(a[2].data, b[2].data, atol=1e-15)
    np.testing.assert_allclose(a[0].data, b[0].data, atol=1e-15)


def test_pool_empty_graph():
    with pytest.raises(ValueError):
        pool_and_readout(Tensor(np.zeros((0, 2))), np.zeros(0, int), np.zeros(0, int), 1)


def test_zero_layers_is_modality_mean():
    g = random_graph(np.random.default_rng(17), attrs=np.array([G, G, I, T, T, T]))
    _, _, readout = pool_and_readout(g.features, g.attrs, g.graph_index, 1)
    x = g.features.data
    want = np.mean([x[:2].mean(0), x[2:3].mean(0), x[3:].mean(0)], axis=0)
    np.testing.assert_allclose(readout.data[0], want, atol=1e-12)
