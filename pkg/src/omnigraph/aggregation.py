"""Meta-path neighbourhoods and multi-head multi-relation attention over typed graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (Tensor, concat, cosine_rows, dropout, matmul, segment_softmax, segment_sum,
                   take_rows)
from .core import tensor as T
from .hetgraph import MODALITIES, REL_TABLE, RELATIONS, HetGraph, Modality, Relation

META_PATH_REL = len(RELATIONS)  # edge-projection slot for neighbours reached only via a path


@dataclass(frozen=True)
class MetaPath:
    attrs: tuple
    rels: tuple

    def __post_init__(self):
        if not 2 <= len(self.attrs) <= 3:
            raise ValueError("meta-paths span one or two hops")
        if len(self.rels) != len(self.attrs) - 1:
            raise ValueError("need one relation per hop")

    @classmethod
    def of(cls, *attrs):
        """Path through ``attrs`` labelled with the relations R implies (``None`` if absent)."""
        from .hetgraph import relation_between
        attrs = tuple(Modality.parse(a) for a in attrs)
        return cls(attrs, tuple(relation_between(a, b) for a, b in zip(attrs, attrs[1:])))

    @property
    def hops(self):
        return len(self.rels)

    def is_valid(self, relations=RELATIONS):
        table = _cross_table(relations)
        return all(r is not None and table[a, b] == r for a, b, r in zip(self.attrs, self.attrs[1:], self.rels))

    def __str__(self):
        out = self.attrs[0].name
        for r, a in zip(self.rels, self.attrs[1:]):
            out += f"-{r.label if r is not None else '?'}->{a.name}"
        return out


KNOWLEDGE_META_PATHS = (
    MetaPath.of("G", "I", "C"),
    MetaPath.of("G", "I", "T"),
    MetaPath.of("C", "I", "G"),
    MetaPath.of("T", "I", "G"),
)


def _cross_table(relations):
    allowed = {Relation.parse(r) for r in relations} - {Relation.INTRA_MODAL}
    table = np.full((4, 4), -1, dtype=np.int64)
    for a in MODALITIES:
        for b in MODALITIES:
            if a != b and REL_TABLE[a, b] in allowed:
                table[a, b] = REL_TABLE[a, b]
    return table


def derive_meta_paths(relations=RELATIONS, rng=None, max_hops=2, n_walks=1000):
    """Collect the distinct attribute paths visited by random walks over cross-modal relations.

    Walks never revisit an attribute and never take intra-modal steps; every
    prefix of at least one hop is kept.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    table = _cross_table(relations)
    starts = [a for a in MODALITIES if np.any(table[a] >= 0)]
    found = set()
    if not starts:
        return []
    for _ in range(n_walks):
        walk = [starts[rng.integers(len(starts))]]
        rels = []
        while len(rels) < max_hops:
            options = [b for b in MODALITIES if table[walk[-1], b] >= 0 and b not in walk]
            if not options:
                break
            nxt = options[rng.integers(len(options))]
            rels.append(Relation(table[walk[-1], nxt]))
            walk.append(nxt)
            found.add(MetaPath(tuple(walk), tuple(rels)))
    return sorted(found, key=lambda p: (p.hops, [int(a) for a in p.attrs]))


def random_meta_paths(rng, n_paths=4, length=3):
    """Attribute sequences drawn without regard to the relation set."""
    out = set()
    while len(out) < n_paths:
        attrs = rng.choice(4, size=length, replace=False)
        out.add(MetaPath.of(*attrs))
    return sorted(out, key=lambda p: [int(a) for a in p.attrs])


def reach_table(paths, hops=2):
    """``reach[a_target, a_source]``: may a node of ``a_target`` aggregate from ``a_source``?

    Every attribute visited within ``hops`` steps along a path that starts at
    the target's attribute is reachable; same-attribute nodes always are.
    """
    if not 1 <= hops <= 2:
        raise ValueError("hops must be 1 or 2")
    reach = np.eye(4, dtype=bool)
    for p in paths:
        for a in p.attrs[1:1 + hops]:
            reach[p.attrs[0], a] = True
    return reach


def meta_path_neighbors(g: HetGraph, v, paths, hops=2):
    if not 0 <= v < g.n_nodes:
        raise ValueError(f"node {v} not in graph")
    reach = reach_table(paths, hops)
    mask = reach[g.attrs[v], g.attrs] & (g.graph_index == g.graph_index[v])
    mask[v] = False
    return set(np.flatnonzero(mask).tolist())


def neighbor_pairs(attrs, graph_index, reach):
    """All (source, target) pairs allowed by ``reach`` inside each subject graph."""
    srcs, dsts = [], []
    for gi in np.unique(graph_index):
        idx = np.flatnonzero(graph_index == gi)
        s, t = np.meshgrid(idx, idx, indexing="ij")
        s, t = s.ravel(), t.ravel()
        keep = (s != t) & reach[attrs[t], attrs[s]]
        srcs.append(s[keep])
        dsts.append(t[keep])
    if not srcs:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy()
    return np.concatenate(srcs), np.concatenate(dsts)


def knn_pairs(g: HetGraph, k=15):
    """Each target's ``k`` most cosine-similar other nodes within its subject, any modality."""
    x = g.features.data
    norm = np.linalg.norm(x, axis=1)
    srcs, dsts = [], []
    for gi in range(g.n_graphs):
        idx = np.flatnonzero(g.graph_index == gi)
        xs, ns = x[idx], norm[idx]
        denom = np.outer(ns, ns)
        sim = np.where(denom > 0, xs @ xs.T / np.where(denom > 0, denom, 1.0), 0.0)
        np.fill_diagonal(sim, -np.inf)
        for j, t in enumerate(idx):
            kk = min(k, len(idx) - 1)
            if kk <= 0:
                continue
            order = np.lexsort((idx, -sim[j]))[:kk]
            srcs.append(idx[order])
            dsts.append(np.full(kk, t))
    if not srcs:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy()
    return np.concatenate(srcs).astype(np.int64), np.concatenate(dsts).astype(np.int64)


@dataclass
class MessageEdges:
    """Edges that carry attention messages: source, target, relation slot, scalar feature."""

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weights: Tensor
    n_nodes: int

    def __len__(self):
        return len(self.src)

    def in_degree(self):
        return np.bincount(self.dst, minlength=self.n_nodes)


def message_edges(g: HetGraph, src, dst, path_edges=True, features=None):
    """Attach relation and edge feature to each neighbour pair.

    Pairs backed by a graph edge reuse it.  Pairs whose modalities have no
    relation in R become meta-path edges (own projection slot, cosine feature)
    when ``path_edges`` is set, and raise otherwise.  Pairs that should have
    an edge but lost it (augmentation, kNN sparsification) are skipped.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    n = g.n_nodes
    gkeys = g.src * n + g.dst
    order = np.argsort(gkeys, kind="stable")
    sorted_keys = gkeys[order]
    keys = src * n + dst
    if len(sorted_keys):
        pos = np.minimum(np.searchsorted(sorted_keys, keys), len(sorted_keys) - 1)
        found = sorted_keys[pos] == keys
    else:
        pos = np.zeros(len(keys), dtype=np.int64)
        found = np.zeros(len(keys), dtype=bool)
    related = REL_TABLE[g.attrs[src], g.attrs[dst]] >= 0
    orphan = ~found & ~related
    if orphan.any() and not path_edges:
        s, t = int(src[orphan][0]), int(dst[orphan][0])
        raise ValueError(f"neighbor without relation: {s} -> {t}")
    direct = found
    edge_idx = order[pos[direct]]
    x = features if features is not None else g.features
    parts = [take_rows(g.weights, edge_idx)]
    if orphan.any():
        parts.append(cosine_rows(take_rows(x, src[orphan]), take_rows(x, dst[orphan])))
    weights = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    return MessageEdges(
        src=np.concatenate([src[direct], src[orphan]]),
        dst=np.concatenate([dst[direct], dst[orphan]]),
        rel=np.concatenate([g.rel[edge_idx], np.full(int(orphan.sum()), META_PATH_REL, dtype=np.int64)]),
        weights=weights,
        n_nodes=n,
    )


class AttentionLayer:
    """One round of typed multi-head attention with edge-feature keys.

    Per head the score of ``s -> t`` is ``sum_k K_s[k] * E[k] * Q_t[k] / sqrt(d)``
    where ``E`` is an affine image of the scalar edge feature for that edge's
    relation.  Scores are softmax-normalised per target and head.
    """

    def __init__(self, d, heads, rng, n_types=4, n_rels=len(RELATIONS) + 1, tie_kv=False,
                 residual=False, layer_norm=False, bias=False, name="agg"):
        if d % heads:
            raise ValueError(f"dim {d} not divisible by {heads} heads")
        self.d, self.heads, self.dh = d, heads, d // heads
        self.n_types = n_types
        self.tie_kv, self.residual, self.layer_norm = tie_kv, residual, layer_norm
        self.bias = bias
        lim = np.sqrt(6.0 / (2 * d))

        def typed(tag):
            w = Tensor(rng.uniform(-lim, lim, size=(d, n_types * d)), requires_grad=True,
                       name=f"{name}.{tag}.weight")
            b = Tensor(np.zeros((n_types, d)), requires_grad=True, name=f"{name}.{tag}.bias") if bias else None
            return w, b

        self.wk, self.bk = typed("key")
        self.wq, self.bq = typed("query")
        self.wv, self.bv = (self.wk, self.bk) if tie_kv else typed("value")
        # bias 1 with small slope: starts close to plain dot-product attention
        self.w_rel = Tensor(rng.normal(0.0, 0.1, size=(n_rels, d)), requires_grad=True, name=f"{name}.rel.weight")
        self.b_rel = Tensor(np.ones((n_rels, d)), requires_grad=True, name=f"{name}.rel.bias")
        if layer_norm:
            self.ln_gain = Tensor(np.ones(d), requires_grad=True, name=f"{name}.ln.gain")
            self.ln_bias = Tensor(np.zeros(d), requires_grad=True, name=f"{name}.ln.bias")

    def parameters(self):
        out = [self.wk, self.bk, self.wq, self.bq]
        if not self.tie_kv:
            out += [self.wv, self.bv]
        out = [p for p in out if p is not None]
        out += [self.w_rel, self.b_rel]
        if self.layer_norm:
            out += [self.ln_gain, self.ln_bias]
        return out

    def project(self, x, types, w, b):
        n = x.shape[0]
        flat = matmul(x, w).reshape(n * self.n_types, self.d)
        out = take_rows(flat, np.arange(n) * self.n_types + types)
        return out + take_rows(b, types) if b is not None else out

    def scores(self, x, types, msg: MessageEdges, rels=None):
        """Per-edge, per-head scores before normalisation, shape (E, h)."""
        rels = msg.rel if rels is None else rels
        k = self.project(x, types, self.wk, self.bk)
        q = self.project(x, types, self.wq, self.bq)
        ek = take_rows(self.w_rel, rels) * msg.weights.reshape(-1, 1) + take_rows(self.b_rel, rels)
        prod = take_rows(k, msg.src) * ek * take_rows(q, msg.dst)
        return prod.reshape(len(msg), self.heads, self.dh).sum(axis=2) * (1.0 / np.sqrt(self.d))

    def attention(self, x, types, msg, rels=None):
        return segment_softmax(self.scores(x, types, msg, rels), msg.dst, msg.n_nodes)

    def __call__(self, x, types, msg: MessageEdges, rels=None, uniform=False,
                 training=False, rng=None, p_drop=0.0):
        n = x.shape[0]
        if x.shape[1] != self.d:
            raise ValueError(f"feature dim {x.shape[1]} != layer dim {self.d}")
        deg = msg.in_degree()
        if uniform:
            alpha = Tensor(np.repeat((1.0 / np.maximum(deg, 1))[msg.dst][:, None], self.heads, axis=1))
        else:
            alpha = self.attention(x, types, msg, rels)
        v = self.project(x, types, self.wv, self.bv)
        vals = take_rows(v, msg.src).reshape(len(msg), self.heads, self.dh) * alpha.reshape(len(msg), self.heads, 1)
        out = segment_sum(vals.reshape(len(msg), self.d), msg.dst, n)
        isolated = (deg == 0).astype(np.float64)[:, None]
        if self.residual:
            out = out + x
        elif isolated.any():
            out = out + x * Tensor(isolated)
        if self.layer_norm:
            out = _layer_norm(out, self.ln_gain, self.ln_bias)
        return dropout(out, p_drop, training, rng)


def _layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=1, keepdims=True)
    return c / T.sqrt(var + eps) * gain + bias


def attention_scores(g: HetGraph, target, neighbors, layer: AttentionLayer, path_edges=False,
                     features=None):
    """Normalised attention of ``target`` over ``neighbors``, shape (len(neighbors), h)."""
    neighbors = np.asarray(sorted(neighbors), dtype=np.int64)
    if neighbors.size == 0:
        raise ValueError("empty neighbour set")
    x = features if features is not None else g.features
    dst = np.full(len(neighbors), int(target), dtype=np.int64)
    msg = message_edges(g, neighbors, dst, path_edges=path_edges, features=x)
    if len(msg) != len(neighbors):
        missing = sorted(set(neighbors.tolist()) - set(msg.src.tolist()))
        raise ValueError(f"neighbor without relation: {missing} -> {target}")
    alpha = layer.attention(x, g.attrs, msg).data
    order = np.argsort(msg.src)
    return alpha[order]


def pool_and_readout(x, types, graph_index, n_graphs, n_types=4):
    """Per-subject modality prototypes (G, n_types, d), presence mask, and mean readout (G, d)."""
    if x.shape[0] == 0:
        raise ValueError("empty graph")
    seg = np.asarray(graph_index) * n_types + np.asarray(types)
    counts = np.bincount(seg, minlength=n_graphs * n_types).astype(np.float64)
    present = counts > 0
    inv = np.where(present, 1.0 / np.maximum(counts, 1.0), 0.0)
    protos = segment_sum(x, seg, n_graphs * n_types) * Tensor(inv[:, None])
    n_present = present.reshape(n_graphs, n_types).sum(axis=1).astype(np.float64)
    readout = segment_sum(protos, np.repeat(np.arange(n_graphs), n_types), n_graphs) \
        * Tensor((1.0 / np.maximum(n_present, 1.0))[:, None])
    return protos.reshape(n_graphs, n_types, x.shape[1]), present.reshape(n_graphs, n_types), readout


__all__ = [
    "AttentionLayer", "KNOWLEDGE_META_PATHS", "META_PATH_REL", "MessageEdges", "MetaPath",
    "attention_scores", "derive_meta_paths", "knn_pairs", "message_edges", "meta_path_neighbors",
    "neighbor_pairs", "pool_and_readout", "random_meta_paths", "reach_table",
]
