"""Typed multimodal graphs: node/edge attributes, construction, validation, dumps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .core import Linear, Tensor, concat, cosine_rows, elu, segment_sum, take_rows


class Modality(IntEnum):
    G = 0  # genomics
    I = 1  # image patches
    C = 2  # cell graphs
    T = 3  # text sentences

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


class Relation(IntEnum):
    EXPRESS = 0
    DEPICT = 1
    ATOMIZE = 2
    INTRA_MODAL = 3

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


MODALITIES = tuple(Modality)
RELATIONS = tuple(Relation)

_CROSS = {
    frozenset((Modality.G, Modality.I)): Relation.EXPRESS,
    frozenset((Modality.I, Modality.T)): Relation.DEPICT,
    frozenset((Modality.I, Modality.C)): Relation.ATOMIZE,
}


def relation_table(relations=RELATIONS):
    """4x4 lookup of relation id for (source attr, target attr); -1 where none."""
    allowed = {Relation.parse(r) for r in relations}
    table = np.full((4, 4), -1, dtype=np.int64)
    for a in MODALITIES:
        for b in MODALITIES:
            rel = relation_between(a, b)
            if rel is not None and rel in allowed:
                table[a, b] = rel
    return table


def relation_between(a, b):
    a, b = Modality.parse(a), Modality.parse(b)
    if a == b:
        return Relation.INTRA_MODAL
    return _CROSS.get(frozenset((a, b)))


REL_TABLE = relation_table()


def expected_edge_count(counts):
    """Edge count of a complete typed graph with per-modality instance ``counts``."""
    n = [int(counts.get(m, 0)) if isinstance(counts, dict) else int(counts[m]) for m in MODALITIES]
    g, i, c, t = n
    return 2 * g * i + 2 * i * t + 2 * i * c + sum(k * (k - 1) for k in n)


def _cosine_np(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u, axis=-1), np.linalg.norm(v, axis=-1)
    denom = nu * nv
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (u * v).sum(axis=-1) / np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, out, 0.0)


def cosine_similarity(u, v):
    """Cosine of two vectors; 0 when either has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size == 0:
        raise ValueError(f"cosine needs equal-length non-empty vectors, got {u.shape} and {v.shape}")
    return float(_cosine_np(u, v))


@dataclass
class HetGraph:
    """Typed directed graph.  Nodes are the row indices of ``features``.

    ``graph_index`` tags each node with its subject when several graphs are
    stacked into one disjoint union; ``prompt_mask`` marks inserted nodes.
    ``pristine`` is cleared by augmentation, after which edge counts and
    weights no longer follow the construction rule.
    """

    attrs: np.ndarray
    features: Tensor
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weights: Tensor
    subject_ids: list = field(default_factory=lambda: [None])
    graph_index: np.ndarray | None = None
    prompt_mask: np.ndarray | None = None
    pristine: bool = True
    topology: str = "complete"

    def __post_init__(self):
        self.attrs = np.asarray(self.attrs, dtype=np.int64)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.rel = np.asarray(self.rel, dtype=np.int64)
        if self.graph_index is None:
            self.graph_index = np.zeros(len(self.attrs), dtype=np.int64)
        if self.prompt_mask is None:
            self.prompt_mask = np.zeros(len(self.attrs), dtype=bool)

    @property
    def subject_id(self):
        return self.subject_ids[0] if len(self.subject_ids) == 1 else self.subject_ids

    @property
    def n_nodes(self):
        return len(self.attrs)

    @property
    def n_edges(self):
        return len(self.src)

    @property
    def n_graphs(self):
        return len(self.subject_ids)

    @property
    def dim(self):
        return self.features.shape[1]

    def counts(self, graph=0):
        sel = self.attrs[self.graph_index == graph]
        return {m: int((sel == m).sum()) for m in MODALITIES}

    def nodes_of(self, modality, graph=None):
        mask = self.attrs == Modality.parse(modality)
        if graph is not None:
            mask &= self.graph_index == graph
        return np.flatnonzero(mask)

    def edge_lookup(self):
        return {(int(s), int(t)): k for k, (s, t) in enumerate(zip(self.src, self.dst))}

    def validate(self, tol=1e-9):
        """Raise ``ValueError`` on any broken structural invariant."""
        n = self.n_nodes
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("features must be an N x d matrix")
        if not np.all(np.isfinite(self.features.data)):
            raise ValueError("non-finite node features")
        if self.attrs.size and (self.attrs.min() < 0 or self.attrs.max() > 3):
            raise ValueError("unknown node attribute")
        if not (len(self.dst) == len(self.rel) == self.n_edges == len(self.weights.data)):
            raise ValueError("edge arrays disagree in length")
        if self.n_edges:
            if self.src.min() < 0 or self.dst.min() < 0 or max(self.src.max(), self.dst.max()) >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(self.src == self.dst):
                raise ValueError("self-loop")
            if np.any(self.graph_index[self.src] != self.graph_index[self.dst]):
                raise ValueError("edge crosses subject graphs")
            implied = REL_TABLE[self.attrs[self.src], self.attrs[self.dst]]
            if np.any(implied < 0):
                raise ValueError("edge between modalities with no relation")
            if np.any(implied != self.rel):
                raise ValueError("edge relation inconsistent with endpoint attributes")
            keys = self.src * n + self.dst
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate edge")
        if self.pristine:
            for gi in range(self.n_graphs):
                counts = self.counts(gi)
                if self.topology == "complete":
                    want = expected_edge_count(counts)
                    got = int((self.graph_index[self.src] == gi).sum())
                    if got != want:
                        raise ValueError(f"graph {gi}: {got} edges, expected {want}")
            if self.n_edges:
                x = self.features.data
                cos = _cosine_np(x[self.src], x[self.dst])
                if np.max(np.abs(cos - self.weights.data)) > tol:
                    raise ValueError("edge weight differs from endpoint cosine")
        return True

    def dump(self):
        """Line-oriented text form for golden files."""
        lines = [f"node {i} {Modality(a).name} dim={self.dim}" for i, a in enumerate(self.attrs)]
        w = self.weights.data
        for k in range(self.n_edges):
            lines.append(f"edge {self.src[k]} {self.dst[k]} {Relation(self.rel[k]).label} {w[k]:.6f}")
        return "\n".join(lines) + "\n"

    def permuted(self, perm):
        """Same graph with node ``i`` moved to position ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        return replace(
            self,
            attrs=self.attrs[inv],
            features=take_rows(self.features, inv),
            src=perm[self.src],
            dst=perm[self.dst],
            graph_index=self.graph_index[inv],
            prompt_mask=self.prompt_mask[inv],
        )


def parse_dump(text):
    """Inverse of :meth:`HetGraph.dump` for structure: (nodes, edges) tuples."""
    nodes, edges = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "node":
            nodes.append((int(parts[1]), parts[2], int(parts[3].split("=")[1])))
        elif parts[0] == "edge":
            edges.append((int(parts[1]), int(parts[2]), parts[3], float(parts[4])))
        else:
            raise ValueError(f"unrecognised dump line: {line!r}")
    return nodes, edges


def typed_pairs(attrs, graph_index=None, table=REL_TABLE, only_new=None):
    """All relation-valid ordered pairs within each subject graph.

    ``only_new`` restricts to pairs touching at least one flagged node, which
    is how completion adds edges without touching existing ones.
    """
    attrs = np.asarray(attrs, dtype=np.int64)
    if graph_index is None:
        graph_index = np.zeros(len(attrs), dtype=np.int64)
    srcs, dsts = [], []
    for gi in np.unique(graph_index):
        idx = np.flatnonzero(graph_index == gi)
        s, t = np.meshgrid(idx, idx, indexing="ij")
        s, t = s.ravel(), t.ravel()
        keep = (s != t) & (table[attrs[s], attrs[t]] >= 0)
        if only_new is not None:
            keep &= only_new[s] | only_new[t]
        srcs.append(s[keep])
        dsts.append(t[keep])
    if not srcs:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy()
    return np.concatenate(srcs), np.concatenate(dsts)


def knn_intra(attrs, features, k, graph_index=None):
    """Sparsify intra-modal pairs: each target keeps its ``k`` most similar same-modality sources."""
    src, dst = typed_pairs(attrs, graph_index)
    intra = attrs[src] == attrs[dst]
    cos = _cosine_np(features[src], features[dst])
    keep = ~intra
    for t in np.unique(dst[intra]):
        cand = np.flatnonzero(intra & (dst == t))
        order = cand[np.lexsort((src[cand], -cos[cand]))]
        keep[order[:k]] = True
    return src[keep], dst[keep]


class ModalityProjector:
    """Per-modality ``Linear + ELU`` mapping raw instance features to the shared dim.

    With ``cell_gcn`` set, C instances may be given as :class:`CellGraph`
    objects; each is embedded by the GCN before the C projection.
    """

    def __init__(self, input_dims, d, rng, cell_gcn=None):
        self.d = d
        self.cell_gcn = cell_gcn
        self.layers = {Modality.parse(m): Linear(int(n), d, rng, name=f"proj.{Modality.parse(m).name}")
                       for m, n in input_dims.items()}

    def __call__(self, modality, x):
        m = Modality.parse(modality)
        if m not in self.layers:
            raise ValueError(f"no projection for modality {m.name}")
        layer = self.layers[m]
        if isinstance(x, (list, tuple)) and x and isinstance(x[0], CellGraph):
            if self.cell_gcn is None:
                raise ValueError("cell graphs given but projector has no GCN")
            x = concat([self.cell_gcn(g).reshape(1, -1) for g in x], axis=0)
        elif not isinstance(x, Tensor):
            x = Tensor(x)
        if x.shape[-1] != layer.d_in:
            raise ValueError(f"modality {m.name}: got dim {x.shape[-1]}, projection expects {layer.d_in}")
        return elu(layer(x))

    def parameters(self):
        out = [p for m in sorted(self.layers) for p in self.layers[m].parameters()]
        return out + (self.cell_gcn.parameters() if self.cell_gcn is not None else [])


def edges_for(attrs, x, graph_index=None, topology="complete"):
    """Relation-valid directed edges plus cosine weights for node features ``x``."""
    if topology == "complete":
        src, dst = typed_pairs(attrs, graph_index)
    elif topology.startswith("knn"):
        k = int(topology[topology.index("(") + 1:-1])
        src, dst = knn_intra(attrs, x.data, k, graph_index)
    else:
        raise ValueError(f"unknown intra_modal_topology {topology!r}")
    rel = REL_TABLE[attrs[src], attrs[dst]]
    weights = cosine_rows(take_rows(x, src), take_rows(x, dst))
    return src, dst, rel, weights


def build_het_graph(subject, projector, topology="complete"):
    """One node per present instance, projected to the shared dim, fully typed-connected."""
    present = [m for m in MODALITIES if subject.has(m)]
    if not present:
        raise ValueError(f"subject {subject.subject_id}: all modalities absent")
    feats, attrs = [], []
    for m in present:
        x = subject.instances(m)
        feats.append(projector(m, x))
        attrs.append(np.full(len(x), int(m), dtype=np.int64))
    x = concat(feats, axis=0) if len(feats) > 1 else feats[0]
    attrs = np.concatenate(attrs)
    src, dst, rel, w = edges_for(attrs, x, topology=topology)
    return HetGraph(attrs, x, src, dst, rel, w, subject_ids=[subject.subject_id], topology=topology)


def union(graphs):
    """Disjoint union; node ids of later graphs are offset."""
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs])[:-1]
    gi_offsets = np.cumsum([0] + [g.n_graphs for g in graphs])[:-1]
    return HetGraph(
        attrs=np.concatenate([g.attrs for g in graphs]),
        features=concat([g.features for g in graphs], axis=0),
        src=np.concatenate([g.src + o for g, o in zip(graphs, offsets)]),
        dst=np.concatenate([g.dst + o for g, o in zip(graphs, offsets)]),
        rel=np.concatenate([g.rel for g in graphs]),
        weights=concat([g.weights for g in graphs], axis=0),
        subject_ids=[s for g in graphs for s in g.subject_ids],
        graph_index=np.concatenate([g.graph_index + o for g, o in zip(graphs, gi_offsets)]),
        prompt_mask=np.concatenate([g.prompt_mask for g in graphs]),
        pristine=all(g.pristine for g in graphs),
        topology=graphs[0].topology,
    )


@dataclass
class CellGraph:
    features: np.ndarray
    edges: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("cell features must be N_cells x d_raw")
        n = len(self.features)
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"cell edge ({i}, {j}) out of range for {n} cells")


def gcn_norm_edges(n, edges):
    """Edge list of D^{-1/2}(A+I)D^{-1/2} for an undirected cell graph."""
    pairs = {(i, i) for i in range(n)}
    for i, j in edges:
        if i != j:
            pairs.add((int(i), int(j)))
            pairs.add((int(j), int(i)))
    pairs = sorted(pairs)
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    deg = np.bincount(dst, minlength=n).astype(np.float64)
    return src, dst, 1.0 / np.sqrt(deg[src] * deg[dst])


class CellGCN:
    """One symmetric-normalised propagation, projection, ELU, then mean over cells."""

    def __init__(self, d_raw, d, rng):
        self.linear = Linear(d_raw, d, rng, name="cell_gcn")

    def __call__(self, g: CellGraph):
        return cell_graph_gcn(g, self.linear)

    def parameters(self):
        return self.linear.parameters()


def cell_graph_gcn(g: CellGraph, linear: Linear):
    n = len(g.features)
    if n == 0:
        raise ValueError("empty cell graph")
    if g.features.shape[1] != linear.d_in:
        raise ValueError(f"cell feature dim {g.features.shape[1]} != GCN input dim {linear.d_in}")
    src, dst, norm = gcn_norm_edges(n, g.edges)
    x = Tensor(g.features)
    msgs = take_rows(x, src) * Tensor(norm[:, None])
    h = segment_sum(msgs, dst, n)
    h = elu(linear(h))
    return h.mean(axis=0)


__all__ = [
    "CellGCN", "CellGraph", "HetGraph", "MODALITIES", "Modality", "ModalityProjector",
    "REL_TABLE", "RELATIONS", "Relation", "build_het_graph", "cell_graph_gcn",
    "cosine_similarity", "edges_for", "expected_edge_count", "gcn_norm_edges",
    "knn_intra", "parse_dump", "relation_between", "relation_table",
    "typed_pairs", "union",
]
