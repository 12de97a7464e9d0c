"""Prompt-node completion of missing modalities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Linear, Tensor, concat, cosine_rows, matmul, softmax, take_rows
from .hetgraph import REL_TABLE, HetGraph, Modality, typed_pairs


@dataclass
class ModalityPrior:
    modality: Modality
    mean: np.ndarray
    std: np.ndarray


def fit_modality_prior(dataset, modality, projector=None, floor=1e-6):
    """Diagonal Gaussian over (projected) instance features of subjects that have ``modality``.

    Without a projector the raw instance rows are used.  Population std,
    floored so a single instance still yields a proper Gaussian.
    """
    m = Modality.parse(modality)
    rows = []
    for s in dataset:
        if not s.has(m):
            continue
        x = s.instances(m)
        rows.append(projector(m, x).data if projector is not None else np.asarray(x, dtype=np.float64))
    if not rows:
        raise ValueError(f"no prior available: no subject has modality {m.name}")
    feats = np.concatenate(rows, axis=0)
    return ModalityPrior(m, feats.mean(axis=0), np.maximum(feats.std(axis=0), floor))


def init_prompt_nodes(prior: ModalityPrior, n_prompts, rng):
    return prior.mean + prior.std * rng.normal(size=(n_prompts, prior.mean.size))


class PromptState:
    """Learnable prompt nodes, prompt bank, and the bank-weighting projection for one modality."""

    def __init__(self, modality, prompt_nodes, n_bank=5, rng=None, bank_std=0.02):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.modality = Modality.parse(modality)
        nodes = np.asarray(prompt_nodes, dtype=np.float64)
        d = nodes.shape[1]
        name = self.modality.name
        self.prompt_nodes = Tensor(nodes, requires_grad=True, name=f"prompt.{name}.nodes")
        self.bank = Tensor(rng.normal(0.0, bank_std, size=(n_bank, d)), requires_grad=True,
                           name=f"prompt.{name}.bank")
        self.bank_proj = Linear(d, n_bank, rng, name=f"prompt.{name}.bank_proj")

    @classmethod
    def from_prior(cls, prior, n_prompts=5, n_bank=5, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(prior.modality, init_prompt_nodes(prior, n_prompts, rng), n_bank, rng)

    @property
    def n_prompts(self):
        return self.prompt_nodes.shape[0]

    def parameters(self):
        return [self.prompt_nodes, self.bank] + self.bank_proj.parameters()


def prompt_weights(v_p, state: PromptState):
    """Softmax mixing weights over the bank, one row per prompt entity."""
    return softmax(state.bank_proj(v_p), axis=-1)


def entity_dependent_prompt(v_p, state: PromptState):
    v_p = v_p if isinstance(v_p, Tensor) else Tensor(v_p)
    single = v_p.ndim == 1
    rows = v_p.reshape(1, -1) if single else v_p
    out = rows + matmul(prompt_weights(rows, state), state.bank)
    return out.reshape(-1) if single else out


def prompt_features(state, mode="prompt"):
    """Features of the inserted nodes: bank-refined prompts, raw prompts, or zeros."""
    if mode == "prompt":
        return entity_dependent_prompt(state.prompt_nodes, state)
    if mode == "general":
        return state.prompt_nodes
    if mode == "zero":
        return Tensor(np.zeros(state.prompt_nodes.shape))
    raise ValueError(f"unknown completion mode {mode!r}")


def complete_graph(g: HetGraph, missing, state: PromptState | None = None, features=None,
                   mode="prompt", table=REL_TABLE):
    """Insert prompt nodes for ``missing`` into every subject graph lacking it.

    Existing nodes and edges are kept as they are; new edges connect the
    prompt nodes to every node they share a relation with, in both directions.
    """
    m = Modality.parse(missing)
    lacking = [gi for gi in range(g.n_graphs) if not np.any((g.graph_index == gi) & (g.attrs == m))]
    if not lacking:
        raise ValueError(f"nothing to complete: modality {m.name} is present")
    if features is None:
        if state is None:
            raise ValueError("complete_graph needs a PromptState or explicit features")
        features = prompt_features(state, mode)
    n_p = features.shape[0]
    if features.shape[1] != g.dim:
        raise ValueError(f"prompt dim {features.shape[1]} != graph dim {g.dim}")

    n_old = g.n_nodes
    new_gi = np.repeat(np.asarray(lacking, dtype=np.int64), n_p)
    attrs = np.concatenate([g.attrs, np.full(len(new_gi), int(m), dtype=np.int64)])
    graph_index = np.concatenate([g.graph_index, new_gi])
    is_new = np.zeros(len(attrs), dtype=bool)
    is_new[n_old:] = True
    x = concat([g.features, take_rows(features, np.tile(np.arange(n_p), len(lacking)))], axis=0)

    src, dst = typed_pairs(attrs, graph_index, table=table, only_new=is_new)
    rel = table[attrs[src], attrs[dst]]
    w_new = cosine_rows(take_rows(x, src), take_rows(x, dst))
    return HetGraph(
        attrs=attrs, features=x,
        src=np.concatenate([g.src, src]), dst=np.concatenate([g.dst, dst]),
        rel=np.concatenate([g.rel, rel]),
        weights=concat([g.weights, w_new], axis=0),
        subject_ids=list(g.subject_ids), graph_index=graph_index,
        prompt_mask=np.concatenate([g.prompt_mask, is_new[n_old:]]),
        pristine=g.pristine, topology=g.topology,
    )
