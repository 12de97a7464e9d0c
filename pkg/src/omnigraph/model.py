"""End-to-end pipeline: projection, completion, aggregation, readout, task head."""

from __future__ import annotations

import json

import numpy as np

from .aggregation import (KNOWLEDGE_META_PATHS, AttentionLayer, MetaPath, knn_pairs, message_edges,
                          neighbor_pairs, pool_and_readout, random_meta_paths, reach_table)
from .completion import PromptState, complete_graph, fit_modality_prior, prompt_features
from .config import RunConfig
from .core import Tensor, concat, softmax, take_rows
from .data import AugmentConfig, augment_graph, modality_dims
from .hetgraph import MODALITIES, CellGCN, CellGraph, HetGraph, Modality, ModalityProjector, edges_for
from .tasks import (TaskHead, accuracy, assign_time_bins, auc_ovr, build_variant, c_index,
                    grading_loss, risk_scores, survival_loss, time_bin_edges)


class GraphModel:
    def __init__(self, config: RunConfig, input_dims, train_subjects, rng, time_edges=None):
        config.validate()
        self.config = config
        self.variant = build_variant(config.variant)
        self.input_dims = {Modality.parse(m): int(v) for m, v in input_dims.items()}
        cell_gcn = None
        proj_dims = dict(self.input_dims)
        if config.cell_graphs and Modality.C in proj_dims:
            cell_gcn = CellGCN(proj_dims[Modality.C], config.cell_gcn_dim, rng)
            proj_dims[Modality.C] = config.cell_gcn_dim
        self.projector = ModalityProjector(proj_dims, config.d, rng, cell_gcn=cell_gcn)

        self.prompts = {}
        for m in sorted(self.input_dims):
            prior = fit_modality_prior(train_subjects, m, self.projector)
            self.prompts[m] = PromptState.from_prior(prior, config.n_prompts, config.n_bank, rng)

        if self.variant.meta_paths == "random":
            self.meta_paths = tuple(random_meta_paths(rng))
        else:
            self.meta_paths = KNOWLEDGE_META_PATHS
        self.n_types = 4 if self.variant.hetero_nodes else 1
        self.layers = [
            AttentionLayer(config.d, config.heads, rng, n_types=self.n_types, tie_kv=config.tie_kv,
                           residual=config.residual, layer_norm=config.layer_norm,
                           bias=config.kqv_bias, name=f"agg{l}")
            for l in range(config.layers)
        ]
        n_out = config.n_classes if config.task == "grading" else config.n_bins
        self.head = TaskHead(config.task, config.d, n_out, rng)
        if config.task == "survival":
            if time_edges is None:
                time_edges = time_bin_edges([s.time for s in train_subjects], config.n_bins)
            self.time_edges = np.asarray(time_edges, dtype=np.float64)
        else:
            self.time_edges = None
        self.augment_cfg = AugmentConfig(config.edge_drop, config.node_drop, config.feature_noise)

    # parameters ------------------------------------------------------------

    def main_parameters(self):
        out = self.projector.parameters()
        for layer in self.layers:
            out += layer.parameters()
        return out + self.head.parameters()

    def prompt_parameters(self):
        if self.variant.completion not in ("prompt", "general"):
            return []
        out = []
        for m in sorted(self.prompts):
            params = self.prompts[m].parameters()
            out += params if self.variant.completion == "prompt" else params[:1]
        return out

    def named_parameters(self):
        seen, out = set(), {}
        every = self.main_parameters()
        for m in sorted(self.prompts):
            every += self.prompts[m].parameters()
        for p in every:
            if id(p) not in seen:
                seen.add(id(p))
                out[p.name] = p
        return out

    # forward ---------------------------------------------------------------

    def build_graph(self, subjects, training=False, rng=None):
        """Completed (and, in training, augmented) disjoint union of subject graphs."""
        feats, slots, attrs, gidx = [], [], [], []
        offset = 0
        per_mod = {}
        for m in MODALITIES:
            rows = [(i, s) for i, s in enumerate(subjects) if s.has(m) and m in self.input_dims]
            if not rows:
                continue
            inst = [s.instances(m) for _, s in rows]
            if isinstance(inst[0], list):
                x = self.projector(m, [g for block in inst for g in block])
            else:
                x = self.projector(m, np.concatenate(inst, axis=0))
            feats.append(x)
            start = offset
            for i, s in rows:
                n = len(s.instances(m))
                per_mod[(i, m)] = np.arange(start, start + n)
                start += n
            offset = start
        if not feats:
            raise ValueError("no modality present in batch")
        for i, s in enumerate(subjects):
            present = [m for m in MODALITIES if (i, m) in per_mod]
            if not present:
                raise ValueError(f"subject {s.subject_id}: all modalities absent")
            for m in present:
                idx = per_mod[(i, m)]
                slots.append(idx)
                attrs.append(np.full(len(idx), int(m), dtype=np.int64))
                gidx.append(np.full(len(idx), i, dtype=np.int64))
        pool = concat(feats, axis=0) if len(feats) > 1 else feats[0]
        x = take_rows(pool, np.concatenate(slots))
        attrs = np.concatenate(attrs)
        gidx = np.concatenate(gidx)
        src, dst, rel, w = edges_for(attrs, x, gidx, self.config.intra_modal_topology)
        g = HetGraph(attrs, x, src, dst, rel, w, subject_ids=[s.subject_id for s in subjects],
                     graph_index=gidx, topology=self.config.intra_modal_topology)

        mode = self.variant.completion
        if mode != "drop":
            for m in sorted(self.input_dims):
                if all(np.any((g.graph_index == gi) & (g.attrs == m)) for gi in range(g.n_graphs)):
                    continue
                g = complete_graph(g, m, features=prompt_features(self.prompts[m], mode))
        if training and self.config.augment:
            g = augment_graph(g, self.augment_cfg, rng, training=True)
        return g

    def message_passing_edges(self, g):
        if self.variant.aggregation == "knn_mean":
            src, dst = knn_pairs(g, self.variant.knn_k)
        elif not self.variant.hetero_nodes:
            src, dst = neighbor_pairs(g.attrs, g.graph_index, np.ones((4, 4), dtype=bool))
        else:
            src, dst = neighbor_pairs(g.attrs, g.graph_index, reach_table(self.meta_paths, self.config.hops))
        msg = message_edges(g, src, dst, path_edges=self.config.path_edges)
        rels = msg.rel if self.variant.hetero_relations else np.zeros_like(msg.rel)
        return msg, rels

    def embed(self, subjects, training=False, rng=None):
        g = self.build_graph(subjects, training, rng)
        types = g.attrs if self.variant.hetero_nodes else np.zeros_like(g.attrs)
        msg, rels = self.message_passing_edges(g)
        x = g.features
        uniform = self.variant.aggregation == "knn_mean"
        for layer in self.layers:
            x = layer(x, types, msg, rels, uniform=uniform, training=training, rng=rng,
                      p_drop=self.config.dropout)
        _, _, readout = pool_and_readout(x, types, g.graph_index, g.n_graphs, self.n_types)
        return readout

    def forward(self, subjects, training=False, rng=None):
        return self.head(self.embed(subjects, training, rng))

    def loss(self, outputs, subjects):
        if self.config.task == "grading":
            return grading_loss(outputs, np.array([s.grade for s in subjects]))
        bins = assign_time_bins([s.time for s in subjects], self.time_edges)
        return survival_loss(outputs, bins, np.array([s.censored for s in subjects]))

    def predict(self, subjects, batch_size=64):
        outs = [self.forward(subjects[i:i + batch_size]).data for i in range(0, len(subjects), batch_size)]
        return np.concatenate(outs, axis=0)

    def evaluate(self, subjects):
        out = self.predict(subjects)
        metrics = {"loss": float(self.loss(Tensor(out), subjects).data)}
        if self.config.task == "grading":
            probs = softmax(Tensor(out), axis=1).data
            labels = np.array([s.grade for s in subjects])
            metrics["acc"] = accuracy(probs, labels)
            try:
                metrics["auc"] = auc_ovr(probs, labels)
            except ValueError:
                metrics["auc"] = None
        else:
            try:
                metrics["c_index"] = c_index(risk_scores(out), [s.time for s in subjects],
                                             [s.censored for s in subjects])
            except ValueError:
                metrics["c_index"] = None
        return metrics

    # checkpoints -----------------------------------------------------------

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data[...] = arr

    def save(self, path):
        meta = {
            "config": self.config.to_dict(),
            "input_dims": {m.name: d for m, d in self.input_dims.items()},
            "meta_paths": [[int(a) for a in p.attrs] for p in self.meta_paths],
            "time_edges": None if self.time_edges is None else self.time_edges.tolist(),
        }
        np.savez(path, __meta__=np.array(json.dumps(meta)), **self.state_dict())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            state = {k: z[k] for k in z.files if k != "__meta__"}
        config = RunConfig.from_dict(meta["config"])
        model = cls.__new__(cls)
        model._init_for_load(config, meta)
        model.load_state_dict(state)
        return model

    def _init_for_load(self, config, meta):
        dims = meta["input_dims"]
        rng = np.random.default_rng(0)
        placeholder = _PlaceholderPrior(dims, config.cell_graphs)
        self.__init__(config, dims, placeholder, rng, time_edges=meta["time_edges"])
        self.meta_paths = tuple(MetaPath.of(*p) for p in meta["meta_paths"])


class _PlaceholderPrior(list):
    """Stand-in training set so a model can be rebuilt before its weights are loaded."""

    def __init__(self, dims, cell_graphs=False):
        from .data import SubjectRecord
        mods = {}
        for m, n in dims.items():
            if cell_graphs and Modality.parse(m) == Modality.C:
                mods[m] = [CellGraph(np.zeros((1, int(n))), [])]
            else:
                mods[m] = np.zeros((1, int(n)))
        super().__init__([SubjectRecord("placeholder", mods)])


def drop_incomplete_modalities(dataset):
    """Remove every modality that any subject lacks (the drop-missing ablation)."""
    full = [m for m in MODALITIES if all(s.has(m) for s in dataset)]
    gone = [m for m in MODALITIES if m not in full]
    return [s.without(*gone) for s in dataset]


__all__ = ["CellGraph", "GraphModel", "drop_incomplete_modalities", "modality_dims"]
