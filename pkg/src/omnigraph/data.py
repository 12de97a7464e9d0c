"""Subjects, synthetic cohorts, fold plans, missing-modality simulation, augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .core import Tensor, take_rows
from .hetgraph import MODALITIES, CellGraph, HetGraph, Modality


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    modalities: dict
    grade: int = 0
    time: float = 1.0
    censored: bool = False

    def __post_init__(self):
        mods = {}
        for key, value in self.modalities.items():
            m = Modality.parse(key)
            if isinstance(value, (list, tuple)) and value and isinstance(value[0], CellGraph):
                mods[m] = list(value)
                continue
            arr = np.asarray(value, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise ValueError(f"subject {self.subject_id}: modality {m.name} needs >=1 instance row")
            mods[m] = arr
        object.__setattr__(self, "modalities", mods)
        if not self.time > 0:
            raise ValueError(f"subject {self.subject_id}: survival time must be positive, got {self.time}")

    def has(self, m):
        return Modality.parse(m) in self.modalities

    def instances(self, m):
        return self.modalities[Modality.parse(m)]

    def count(self, m):
        return len(self.modalities[Modality.parse(m)]) if self.has(m) else 0

    def present(self):
        return [m for m in MODALITIES if self.has(m)]

    def without(self, *ms):
        drop = {Modality.parse(m) for m in ms}
        return replace(self, modalities={m: v for m, v in self.modalities.items() if m not in drop})

    def dim(self, m):
        x = self.instances(m)
        return x[0].features.shape[1] if isinstance(x, list) else x.shape[1]


def modality_dims(dataset):
    """Raw input dim per modality, checking consistency across subjects."""
    dims = {}
    for s in dataset:
        for m in s.present():
            d = s.dim(m)
            if dims.setdefault(m, d) != d:
                raise ValueError(f"modality {m.name}: inconsistent dims {dims[m]} vs {d} "
                                 f"(subject {s.subject_id})")
    return dims


# synthetic cohorts ---------------------------------------------------------

DEFAULT_DIMS = {"G": 16, "I": 16, "C": 12, "T": 12}
DEFAULT_COUNTS = {"G": (2, 2), "I": (2, 4), "C": (1, 3), "T": (2, 3)}
DEFAULT_SIGNAL = {"G": 0.5, "I": 0.15, "C": 0.15, "T": 0.15}


def generate_synthetic(n_subjects, dims=None, class_count=3, seed=0, counts=None, signal=None,
                       latent_dim=4, noise=1.0, censor_rate=0.2, cell_graphs=False):
    """Class- and risk-structured multimodal cohort.

    Each subject draws a class and a latent vector shared by all modalities.
    Instances are noisy draws around class prototypes shifted by a
    modality-specific loading of the latent, so modalities agree with each
    other but each carries independent noise.
    """
    if n_subjects < 10:
        raise ValueError("need at least 10 subjects")
    rng = np.random.default_rng(seed)
    dims = {Modality.parse(k): int(v) for k, v in (dims or DEFAULT_DIMS).items()}
    counts = {Modality.parse(k): v for k, v in (counts or DEFAULT_COUNTS).items()}
    signal = {Modality.parse(k): float(v) for k, v in (signal or DEFAULT_SIGNAL).items()}

    protos, loads, offsets = {}, {}, {}
    for m in sorted(dims):
        d = dims[m]
        protos[m] = rng.normal(0.0, signal.get(m, 0.5), size=(class_count, d)) * np.sqrt(d / 4)
        loads[m] = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(latent_dim, d))
        offsets[m] = rng.normal(1.0, 0.5, size=d)

    labels = rng.permutation(np.arange(n_subjects) % class_count)
    subjects = []
    for i in range(n_subjects):
        y = int(labels[i])
        z = rng.normal(size=latent_dim)
        mods = {}
        for m in sorted(dims):
            lo, hi = counts.get(m, (1, 1))
            n = int(rng.integers(lo, hi + 1))
            center = protos[m][y] + z @ loads[m] + offsets[m]
            x = center + noise * rng.normal(size=(n, dims[m]))
            if m == Modality.C and cell_graphs:
                mods[m] = [_cell_graph_around(row, rng, noise) for row in x]
            else:
                mods[m] = x
        risk = 0.8 * y / max(class_count - 1, 1) * 2.0 + 0.5 * z[0]
        t = rng.exponential(1.0 / (0.1 * np.exp(risk)))
        t = max(float(t), 1e-3)
        censored = bool(rng.random() < censor_rate)
        if censored:
            t = max(t * float(rng.uniform(0.1, 1.0)), 1e-3)
        subjects.append(SubjectRecord(f"S{i:04d}", mods, grade=y, time=t, censored=censored))
    return subjects


def _cell_graph_around(center, rng, noise):
    n = int(rng.integers(3, 7))
    feats = center + 0.5 * noise * rng.normal(size=(n, center.size))
    edges = [(k, k + 1) for k in range(n - 1)]
    return CellGraph(feats, edges)


# line-delimited JSON -------------------------------------------------------

def subject_to_json(s: SubjectRecord):
    mods = {}
    for m in s.present():
        x = s.instances(m)
        if isinstance(x, list):
            mods[m.name] = [{"cells": g.features.tolist(), "edges": [list(e) for e in g.edges]} for g in x]
        else:
            mods[m.name] = x.tolist()
    return {"subject_id": s.subject_id, "modalities": mods,
            "labels": {"grade": int(s.grade), "time": float(s.time), "censored": bool(s.censored)}}


def export_subjects(dataset, path):
    with open(path, "w") as fh:
        for s in dataset:
            fh.write(json.dumps(subject_to_json(s)) + "\n")


def import_subjects(path):
    """Parse one subject per line; errors carry the 1-based line number."""
    subjects = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                labels = obj.get("labels", {})
                mods = {}
                for key, rows in obj.get("modalities", {}).items():
                    if rows and isinstance(rows[0], dict):
                        mods[key] = [CellGraph(r["cells"], [tuple(e) for e in r.get("edges", [])])
                                     for r in rows]
                    else:
                        mods[key] = rows
                subjects.append(SubjectRecord(
                    str(obj["subject_id"]), mods,
                    grade=int(labels.get("grade", 0)),
                    time=float(labels.get("time", 1.0)),
                    censored=bool(labels.get("censored", False)),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    modality_dims(subjects)
    return subjects


# folds and missingness -----------------------------------------------------

@dataclass
class FoldPlan:
    test_folds: list
    n: int

    def __len__(self):
        return len(self.test_folds)

    def test(self, k):
        return np.sort(self.test_folds[k])

    def train(self, k):
        mask = np.ones(self.n, dtype=bool)
        mask[self.test_folds[k]] = False
        return np.flatnonzero(mask)


def make_fold_plan(dataset, n_folds=5, seed=0, strata=None):
    """Stratified partition into ``n_folds`` test splits.

    Subjects are dealt round-robin within each stratum (by default grade and
    the set of missing modalities), which equalises incomplete-subject counts
    across folds to within one.
    """
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if strata is None:
        strata = [(s.grade, tuple(m for m in MODALITIES if not s.has(m))) for s in dataset]
    folds = [[] for _ in range(n_folds)]
    cursor = 0
    for key in sorted(set(strata), key=repr):
        members = np.array([i for i in range(n) if strata[i] == key])
        for idx in rng.permutation(members):
            folds[cursor % n_folds].append(int(idx))
            cursor += 1
    return FoldPlan([np.array(sorted(f), dtype=np.int64) for f in folds], n)


def apply_missing(dataset, modality, ratio, seed=0, fold_plan=None):
    """Remove ``modality`` from ``round(ratio * n)`` subjects, balanced over test folds."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("missing ratio must lie in [0, 1]")
    m = Modality.parse(modality)
    n = len(dataset)
    if fold_plan is None:
        fold_plan = make_fold_plan(dataset, seed=seed, strata=[s.grade for s in dataset])
    k = int(round(ratio * n))
    if k == 0:
        return list(dataset)
    sizes = np.array([len(f) for f in fold_plan.test_folds], dtype=np.float64)
    quota = np.floor(k * sizes / n).astype(int)
    rema = k * sizes / n - quota
    for j in np.argsort(-rema, kind="stable")[: k - quota.sum()]:
        quota[j] += 1
    rng = np.random.default_rng([seed, int(m)])
    chosen = set()
    for f, q in zip(fold_plan.test_folds, quota):
        chosen.update(int(i) for i in rng.permutation(np.sort(f))[:q])
    out = [s.without(m) if i in chosen else s for i, s in enumerate(dataset)]
    for fk in range(len(fold_plan)):
        if not any(out[i].has(m) for i in fold_plan.train(fk)):
            raise ValueError(f"fold {fk}: no training subject keeps modality {m.name}; "
                             "cannot fit a modality prior")
    return out


# augmentation --------------------------------------------------------------

@dataclass
class AugmentConfig:
    edge_drop: float = 0.1
    node_drop: float = 0.05
    noise: float = 0.01
    max_drop: float = 0.95
    retries: int = 5


def augment_graph(g: HetGraph, cfg: AugmentConfig, rng, training=True):
    """Random edge/node dropping plus Gaussian feature noise, training only."""
    for p in (cfg.edge_drop, cfg.node_drop):
        if not 0.0 <= p <= 1.0:
            raise ValueError("drop probabilities must lie in [0, 1]")
    if not training:
        return g
    if cfg.edge_drop == 0 and cfg.node_drop == 0 and cfg.noise == 0:
        return g
    p_edge = min(cfg.edge_drop, cfg.max_drop)
    p_node = min(cfg.node_drop, cfg.max_drop)
    for _ in range(cfg.retries):
        out = _augment_once(g, p_edge, p_node, cfg.noise, rng)
        if out is not None:
            return out
    return g


def _augment_once(g, p_edge, p_node, sigma, rng):
    n = g.n_nodes
    keep_edge = rng.random(g.n_edges) >= p_edge
    keep_node = np.ones(n, dtype=bool)
    drop_try = np.flatnonzero(rng.random(n) < p_node)
    src, dst = g.src, g.dst
    for v in drop_try:
        same = g.graph_index == g.graph_index[v]
        if (keep_node & same).sum() <= 1:
            continue
        trial = keep_node.copy()
        trial[v] = False
        alive = keep_edge & trial[src] & trial[dst]
        deg = np.bincount(src[alive], minlength=n) + np.bincount(dst[alive], minlength=n)
        had = np.bincount(src[keep_edge & keep_node[src] & keep_node[dst]], minlength=n) \
            + np.bincount(dst[keep_edge & keep_node[src] & keep_node[dst]], minlength=n)
        if np.any(trial & (had > 0) & (deg == 0)):
            continue
        keep_node = trial
    alive = keep_edge & keep_node[src] & keep_node[dst]
    if not keep_node.any():
        return None
    for gi in range(g.n_graphs):
        in_g = g.graph_index == gi
        if not (keep_node & in_g).any():
            return None
        had_edges = np.any(g.graph_index[src] == gi)
        if had_edges and not np.any(alive & (g.graph_index[src] == gi)):
            return None
    nodes = np.flatnonzero(keep_node)
    remap = -np.ones(n, dtype=np.int64)
    remap[nodes] = np.arange(len(nodes))
    feats = take_rows(g.features, nodes)
    weights = take_rows(g.weights, np.flatnonzero(alive))
    if sigma > 0:
        feats = feats + Tensor(sigma * rng.normal(size=feats.shape))
        weights = weights + Tensor(sigma * rng.normal(size=weights.shape))
    return HetGraph(
        attrs=g.attrs[nodes], features=feats,
        src=remap[src[alive]], dst=remap[dst[alive]], rel=g.rel[alive], weights=weights,
        subject_ids=list(g.subject_ids), graph_index=g.graph_index[nodes],
        prompt_mask=g.prompt_mask[nodes], pristine=False, topology=g.topology,
    )
