"""Task heads, losses, evaluation metrics, and ablation variants."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Linear, Tensor, log_sigmoid, log_softmax, nll_loss


class TaskHead:
    """Linear map from the graph readout to class logits or per-bin hazard logits."""

    def __init__(self, kind, d, n_out, rng):
        if kind not in ("grading", "survival"):
            raise ValueError(f"unknown task {kind!r}")
        if n_out < 2:
            raise ValueError("task head needs at least 2 outputs")
        self.kind = kind
        self.linear = Linear(d, n_out, rng, name=f"head.{kind}")

    def __call__(self, readout):
        return self.linear(readout)

    def parameters(self):
        return self.linear.parameters()


def grading_loss(logits, labels):
    """NLL of log-softmax class scores; ``logits`` is (B, C) or a single row."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    return nll_loss(log_softmax(logits, axis=1), np.atleast_1d(labels))


def survival_masks(time_bins, censored, n_bins):
    """Constant masks selecting log-hazard and log-survival terms of the discrete-time likelihood."""
    time_bins = np.atleast_1d(np.asarray(time_bins, dtype=np.int64))
    censored = np.atleast_1d(np.asarray(censored, dtype=bool))
    if time_bins.size and (time_bins.min() < 0 or time_bins.max() >= n_bins):
        raise ValueError(f"time bin out of range [0, {n_bins})")
    bins = np.arange(n_bins)[None, :]
    tb = time_bins[:, None]
    event = ((bins == tb) & ~censored[:, None]).astype(np.float64)
    survive = ((bins < tb) | ((bins == tb) & censored[:, None])).astype(np.float64)
    return event, survive


def survival_loss(hazard_logits, time_bins, censored):
    """Discrete-time hazard NLL averaged over subjects.

    Uncensored subjects pay ``-log h[bin] - sum_{b<bin} log(1-h[b])``; censored
    ones ``-sum_{b<=bin} log(1-h[b])``, with ``h = sigmoid(logits)``.
    """
    z = hazard_logits if isinstance(hazard_logits, Tensor) else Tensor(hazard_logits)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    event, survive = survival_masks(time_bins, censored, z.shape[1])
    ll = log_sigmoid(z) * Tensor(event) + log_sigmoid(-z) * Tensor(survive)
    return -ll.sum() * (1.0 / z.shape[0])


def hazards(hazard_logits):
    z = np.asarray(hazard_logits.data if isinstance(hazard_logits, Tensor) else hazard_logits)
    return 1.0 / (1.0 + np.exp(-z))


def risk_scores(hazard_logits):
    """Summed cumulative hazard per subject; larger means earlier expected event."""
    h = np.atleast_2d(hazards(hazard_logits))
    return np.cumsum(h, axis=1).sum(axis=1)


def time_bin_edges(times, n_bins=4):
    """Interior quantile cut points of the training times."""
    return np.quantile(np.asarray(times, dtype=np.float64), np.linspace(0, 1, n_bins + 1)[1:-1])


def assign_time_bins(times, edges):
    return np.searchsorted(edges, np.asarray(times, dtype=np.float64), side="right")


# metrics -------------------------------------------------------------------

def _average_ranks(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(x)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    return ranks


def binary_auc(scores, positive):
    """Mann-Whitney AUC; tied scores count one half."""
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positives and negatives")
    r = _average_ranks(scores)
    return float((r[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_ovr(scores, labels):
    """Macro one-vs-rest AUC.  Classes lacking positives or negatives are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim == 1:
        return binary_auc(scores, labels == 1)
    aucs = []
    for c in range(scores.shape[1]):
        pos = labels == c
        if pos.all() or not pos.any():
            warnings.warn(f"AUC: class {c} has no positives or no negatives; skipped", stacklevel=2)
            continue
        aucs.append(binary_auc(scores[:, c], pos))
    if not aucs:
        raise ValueError("AUC undefined: every class is degenerate")
    return float(np.mean(aucs))


def accuracy(scores, labels):
    pred = np.argmax(np.asarray(scores), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def c_index(risks, times, censored):
    """Harrell's concordance over pairs with an observed earlier event."""
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    event = ~np.asarray(censored, dtype=bool)
    comparable = event[:, None] & (times[:, None] < times[None, :])
    n = comparable.sum()
    if n == 0:
        raise ValueError("no comparable pairs for C-index")
    diff = risks[:, None] - risks[None, :]
    concordant = ((diff > 0) + 0.5 * (diff == 0)) * comparable
    return float(concordant.sum() / n)


@dataclass(frozen=True)
class Metrics:
    auc: float | None = None
    acc: float | None = None
    c_index: float | None = None


# ablation variants ---------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    """Switches that turn the full pipeline into one of its ablations."""

    name: str = "full"
    completion: str = "prompt"        # prompt | general | zero | drop
    hetero_nodes: bool = True
    hetero_relations: bool = True
    aggregation: str = "attention"    # attention | knn_mean
    knn_k: int = 15
    meta_paths: str = "knowledge"     # knowledge | random


VARIANTS = {
    "full": Variant("full"),
    "no_hetero_embedding": Variant("no_hetero_embedding", hetero_nodes=False, hetero_relations=False),
    "no_hetero_relation": Variant("no_hetero_relation", hetero_relations=False),
    "no_completion_zero_init": Variant("no_completion_zero_init", completion="zero"),
    "no_completion_drop": Variant("no_completion_drop", completion="drop"),
    "no_prompt_bank": Variant("no_prompt_bank", completion="general"),
    "plain_mean_knn15": Variant("plain_mean_knn15", aggregation="knn_mean", knn_k=15),
    "random_meta_paths": Variant("random_meta_paths", meta_paths="random"),
}


def build_variant(name):
    try:
        return VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}; valid: {', '.join(VARIANTS)}") from None


__all__ = [
    "Metrics", "TaskHead", "VARIANTS", "Variant", "accuracy", "assign_time_bins", "auc_ovr",
    "binary_auc", "build_variant", "c_index", "grading_loss", "hazards", "risk_scores",
    "survival_loss", "survival_masks", "time_bin_edges",
]
