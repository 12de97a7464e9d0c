from collections import Counter

import numpy as np
import pytest

from omnigraph.completion import (ModalityPrior, PromptState, complete_graph, entity_dependent_prompt,
                                  fit_modality_prior, init_prompt_nodes, prompt_features, prompt_weights)
from omnigraph.core import Tape, Tensor
from omnigraph.data import SubjectRecord
from omnigraph.hetgraph import Modality, Relation, expected_edge_count
from oracles import grad_rel_error, random_graph


def test_prior_two_subjects():
    ds = [SubjectRecord("a", {"G": [[1.0, 1.0]]}), SubjectRecord("b", {"G": [[3.0, 3.0]]})]
    prior = fit_modality_prior(ds, "G")
    np.testing.assert_allclose(prior.mean, [2, 2])
    np.testing.assert_allclose(prior.std, [1, 1])


def test_prior_single_instance_floored():
    prior = fit_modality_prior([SubjectRecord("a", {"G": [[1.0, 2.0]]})], "G")
    np.testing.assert_array_equal(prior.std, [1e-6, 1e-6])


def test_prior_ignores_subjects_without_modality():
    ds = [SubjectRecord("a", {"G": [[1.0, 1.0]], "I": [[0.0]]}), SubjectRecord("b", {"G": [[3.0, 5.0]]})]
    before = fit_modality_prior(ds, "G")
    after = fit_modality_prior(ds + [SubjectRecord("c", {"I": [[9.0]]})], "G")
    np.testing.assert_array_equal(before.mean, after.mean)
    np.testing.assert_array_equal(before.std, after.std)


def test_prior_unavailable():
    with pytest.raises(ValueError, match="no prior available"):
        fit_modality_prior([SubjectRecord("a", {"I": [[1.0]]})], "G")


def test_init_prompts_degenerate_prior():
    mean = np.array([3.0, -4.0])
    prior = ModalityPrior(Modality.G, mean, np.full(2, 1e-6))
    rows = init_prompt_nodes(prior, 5, np.random.default_rng(0))
    assert np.all(np.abs(rows - mean) <= 1e-5 * np.linalg.norm(mean))


def test_init_prompts_seeded_and_unbiased():
    prior = ModalityPrior(Modality.G, np.zeros(3), np.ones(3))
    a = init_prompt_nodes(prior, 4, np.random.default_rng(1))
    assert np.array_equal(a, init_prompt_nodes(prior, 4, np.random.default_rng(1)))
    big = init_prompt_nodes(prior, 10_000, np.random.default_rng(2))
    assert np.all(np.abs(big.mean(0)) < 0.05)


def _state(d=8, seed=0):
    rng = np.random.default_rng(seed)
    return PromptState("G", rng.normal(size=(5, d)), n_bank=5, rng=rng)


def test_zero_bank_is_identity():
    st = _state()
    st.bank.data[...] = 0
    v = st.prompt_nodes.data[0]
    np.testing.assert_array_equal(entity_dependent_prompt(v, st).data, v)


def test_equal_bank_rows_add_constant():
    st = _state()
    b = np.arange(8.0)
    st.bank.data[...] = b
    v = st.prompt_nodes.data[1]
    np.testing.assert_allclose(entity_dependent_prompt(v, st).data, v + b, atol=1e-12)


def test_prompt_matches_direct_evaluation():
    st = _state(seed=3)
    st.bank.data[...] = np.random.default_rng(4).normal(size=st.bank.shape)
    v = np.random.default_rng(5).normal(size=8)
    W, c = st.bank_proj.weight.data, st.bank_proj.bias.data
    logits = [sum(v[i] * W[i, j] for i in range(8)) + c[j] for j in range(5)]
    top = max(logits)
    e = [np.exp(z - top) for z in logits]
    w = [x / sum(e) for x in e]
    want = [v[k] + sum(w[j] * st.bank.data[j, k] for j in range(5)) for k in range(8)]
    np.testing.assert_allclose(entity_dependent_prompt(v, st).data, want, atol=1e-12)


def test_bank_weights_are_distributions():
    st = _state()
    w = prompt_weights(st.prompt_nodes, st).data
    assert w.shape == (5, 5)
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)


def test_prompt_gradients():
    rng = np.random.default_rng(6)
    st = _state(d=6, seed=7)
    c = rng.normal(size=(5, 6))
    for k in range(5):
        v = rng.normal(size=(5, 6))
        bank = rng.normal(size=(5, 6))
        w = rng.normal(size=(6, 5))

        def fn(v_, bank_, w_):
            st.bank, st.bank_proj.weight = bank_, w_
            return (entity_dependent_prompt(v_, st) * Tensor(c)).sum()
        assert grad_rel_error(fn, [v, bank, w]) < 1e-4


def test_prompt_modes():
    st = _state()
    assert np.array_equal(prompt_features(st, "general").data, st.prompt_nodes.data)
    assert not prompt_features(st, "zero").data.any()
    with pytest.raises(ValueError):
        prompt_features(st, "bogus")


# completion ------------------------------------------------------------------

def _graph(attrs, d=8, seed=0):
    return random_graph(np.random.default_rng(seed), attrs=np.asarray(attrs), d=d)


def test_complete_g_on_i_only():
    g = _graph([1, 1, 1])
    out = complete_graph(g, "G", _state())
    assert out.n_nodes == g.n_nodes + 5
    new = out.n_edges - g.n_edges
    assert new == 2 * 5 * 3 + 5 * 4 == 50
    out.validate()
    assert out.prompt_mask.sum() == 5


def test_complete_t_relations():
    g = _graph([1, 1])
    out = complete_graph(g, "T", PromptState("T", np.random.default_rng(1).normal(size=(5, 8))))
    new_rels = {Relation(r) for r in out.rel[g.n_edges:]}
    assert new_rels == {Relation.DEPICT, Relation.INTRA_MODAL}


def test_complete_keeps_existing_and_matches_formula():
    base = _graph([1, 1, 2, 3])
    out = complete_graph(base, "G", _state())
    np.testing.assert_array_equal(out.features.data[:base.n_nodes], base.features.data)
    np.testing.assert_array_equal(out.weights.data[:base.n_edges], base.weights.data)
    counts = Counter(Modality(a) for a in out.attrs)
    assert out.n_edges == expected_edge_count(counts)
    out.validate()


def test_complete_present_modality_errors():
    with pytest.raises(ValueError, match="nothing to complete"):
        complete_graph(_graph([0, 1]), "G", _state())


def test_completion_gradients_flow_to_bank_and_prompts():
    st = _state()
    st.bank.data[...] = np.random.default_rng(2).normal(size=st.bank.shape)
    g = _graph([1, 1, 3])
    c = Tensor(np.random.default_rng(3).normal(size=8))
    with Tape() as tape:
        out = complete_graph(g, "G", st)
        loss = (out.features * c).sum() + out.weights.sum()
    grads = tape.backward(loss)
    assert np.abs(grads[st.bank]).sum() > 0
    assert np.abs(grads[st.prompt_nodes]).sum() > 0
