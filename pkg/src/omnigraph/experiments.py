"""Ablation matrix, missing-ratio sweep, and the completion similarity report."""

from __future__ import annotations

import csv
import logging
import traceback

import numpy as np

from .config import RunConfig
from .hetgraph import MODALITIES, REL_TABLE, Modality, Relation
from .model import GraphModel
from .tasks import VARIANTS
from .training import load_dataset, run_train

log = logging.getLogger(__name__)

METRIC_FIELDS = ("auc", "acc", "c_index")


def run_ablation(config: RunConfig, dataset=None, variants=None, epochs=None):
    """Train every variant on the same data, folds and seed; one row per variant.

    A variant that fails gets a row with empty metrics and an ``error`` entry;
    the remaining variants still run.
    """
    dataset = load_dataset(config) if dataset is None else dataset
    rows = []
    for name in variants or list(VARIANTS):
        row = {"variant": name}
        try:
            _, report = run_train(config.updated(variant=name), dataset=dataset, epochs=epochs)
            row.update({k: report["mean"][k] for k in METRIC_FIELDS})
        except Exception as exc:  # keep the matrix going
            log.error("variant %s failed: %s", name, exc)
            log.debug(traceback.format_exc())
            row.update({k: None for k in METRIC_FIELDS})
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def sweep_missing(config: RunConfig, modality="G", etas=(0.2, 0.4, 0.6, 0.8), seeds=(0, 1, 2, 3, 4),
                  variants=("full", "no_completion_zero_init"), epochs=None):
    """Metrics for each (eta, seed, variant); the dataset is regenerated per seed."""
    m = Modality.parse(modality).name
    rows = []
    for seed in seeds:
        base = config.updated(seed=int(seed))
        dataset = load_dataset(base)
        for eta in etas:
            for name in variants:
                cfg = base.updated(variant=name, missing={**config.missing, m: float(eta)})
                _, report = run_train(cfg, dataset=dataset, epochs=epochs)
                rows.append({"eta": float(eta), "seed": int(seed), "variant": name,
                             **{k: report["mean"][k] for k in METRIC_FIELDS}})
    return rows


def summarize_sweep(rows):
    """Mean AUC per (eta, variant)."""
    out = {}
    for r in rows:
        out.setdefault((r["eta"], r["variant"]), []).append(r["auc"])
    return {k: float(np.mean(v)) for k, v in sorted(out.items())}


def write_csv(rows, path, fields=None):
    fields = list(fields or rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: "" if r.get(k) is None else r.get(k) for k in fields})


# similarity report ---------------------------------------------------------

def _partner_means(g, m):
    """Mean edge weight from each partner node to the ``m`` nodes, keyed by relation and partner."""
    w = g.weights.data
    rank = np.zeros(g.n_nodes, dtype=np.int64)
    for a in MODALITIES:
        idx = np.flatnonzero(g.attrs == a)
        rank[idx] = np.arange(len(idx))
    out = {}
    for e in range(g.n_edges):
        s, t = int(g.src[e]), int(g.dst[e])
        if g.attrs[s] != m:
            continue
        rel = Relation(int(g.rel[e]))
        key = "intra" if g.attrs[t] == m else f"{Modality(int(g.attrs[t])).name}{rank[t]}"
        out.setdefault(rel.label, {}).setdefault(key, []).append(w[e])
    return {rel: {k: float(np.mean(v)) for k, v in d.items()} for rel, d in out.items()}


def similarity_report(model: GraphModel, subject, missing=None):
    """Edge weights around ``missing`` in the subject's full graph and in its completed graph.

    For every relation touching the modality, each partner node contributes
    its mean cosine weight to the modality's nodes (intra-modal edges give a
    single mean).  With ``missing=None`` the full graph is compared with itself.
    """
    original = model.build_graph([subject])
    if missing is None:
        completed, m = original, None
    else:
        m = Modality.parse(missing)
        if not subject.has(m):
            raise ValueError(f"subject {subject.subject_id} lacks modality {m.name}")
        completed = model.build_graph([subject.without(m)])
    relations, diffs = {}, []
    for mod in ([m] if m is not None else MODALITIES):
        if mod is None or not np.any(original.attrs == mod):
            continue
        a, b = _partner_means(original, mod), _partner_means(completed, mod)
        for rel in sorted(set(a) | set(b)):
            keys = sorted(set(a.get(rel, {})) & set(b.get(rel, {})))
            pairs = [{"partner": k, "original": a[rel][k], "completed": b[rel][k]} for k in keys]
            relations.setdefault(rel, []).extend({"modality": mod.name, **p} for p in pairs)
            diffs.extend(abs(p["original"] - p["completed"]) for p in pairs)
    return {
        "subject_id": subject.subject_id,
        "missing": None if m is None else m.name,
        "relations": relations,
        "mean_abs_diff": float(np.mean(diffs)) if diffs else 0.0,
    }


def valid_relation_labels():
    return {Relation(int(r)).label for r in np.unique(REL_TABLE[REL_TABLE >= 0])}
