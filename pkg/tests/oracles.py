"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np

from omnigraph.core import Tape, Tensor
from omnigraph.hetgraph import HetGraph, edges_for


# finite differences ----------------------------------------------------------

def analytic_grads(fn, arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    grads = tape.backward(out)
    return [grads.get(t, np.zeros_like(t.data)) for t in leaves]


def numeric_grads(fn, arrays, h=1e-5):
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp = float(fn(*[Tensor(b) for b in plus]).data)
            fm = float(fn(*[Tensor(b) for b in minus]).data)
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def grad_rel_error(fn, arrays, h=1e-5):
    """Largest per-input relative error between tape and central-difference gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    worst = 0.0
    for a, n in zip(analytic_grads(fn, arrays), numeric_grads(fn, arrays, h)):
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-6)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


# graphs ------------------------------------------------------------------------

def random_graph(rng, n_min=1, n_max=12, d=4, attrs=None):
    """Complete typed graph on random attributes and features."""
    if attrs is None:
        n = int(rng.integers(n_min, n_max + 1))
        attrs = rng.integers(0, 4, size=n)
    attrs = np.asarray(attrs, dtype=np.int64)
    x = Tensor(rng.normal(size=(len(attrs), d)))
    src, dst, rel, w = edges_for(attrs, x)
    return HetGraph(attrs, x, src, dst, rel, w)


def brute_neighbors(attrs, v, paths, hops):
    """Enumerate every attribute sequence of length <= hops that prefixes a path from attrs[v]."""
    start = int(attrs[v])
    reached = {start}
    prefixes = {tuple(int(a) for a in p.attrs[:k + 1]) for p in paths for k in range(1, len(p.attrs))}
    for k in range(1, hops + 1):
        for seq in itertools.product(range(4), repeat=k):
            if (start,) + seq in prefixes:
                reached.update(seq)
    return {u for u in range(len(attrs)) if u != v and int(attrs[u]) in reached}


def attention_oracle(x, types, edges, layer):
    """Nested-loop evaluation of typed multi-head attention with edge keys.

    ``edges`` is a list of (src, dst, rel, weight).  Returns the layer output
    and a dict ``alpha[(src, dst)] -> per-head weights``.
    """
    wk, wq, wv = (np.asarray(w.data) for w in (layer.wk, layer.wq, layer.wv))
    bk = layer.bk.data if layer.bk is not None else np.zeros((layer.n_types, layer.d))
    bq = layer.bq.data if layer.bq is not None else np.zeros((layer.n_types, layer.d))
    bv = layer.bv.data if layer.bv is not None else np.zeros((layer.n_types, layer.d))
    w_rel, b_rel = layer.w_rel.data, layer.b_rel.data
    d, h, dh = layer.d, layer.heads, layer.dh
    n = len(x)

    def proj(w, b, v):
        t = int(types[v])
        out = []
        for j in range(d):
            s = b[t, j]
            for i in range(d):
                s += x[v][i] * w[i, t * d + j]
            out.append(s)
        return out

    out = [list(x[v]) for v in range(n)]
    alpha = {}
    for t in range(n):
        incoming = [e for e in edges if e[1] == t]
        if not incoming:
            continue
        q = proj(wq, bq, t)
        row = [0.0] * d
        for head in range(h):
            scores = []
            for s, _, r, wgt in incoming:
                k = proj(wk, bk, s)
                total = 0.0
                for c in range(head * dh, (head + 1) * dh):
                    total += k[c] * (w_rel[r, c] * wgt + b_rel[r, c]) * q[c]
                scores.append(total / math.sqrt(d))
            top = max(scores)
            ex = [math.exp(sc - top) for sc in scores]
            z = sum(ex)
            for (s, _, _, _), e in zip(incoming, ex):
                alpha.setdefault((s, t), [0.0] * h)[head] = e / z
                v = proj(wv, bv, s)
                for c in range(head * dh, (head + 1) * dh):
                    row[c] += e / z * v[c]
        out[t] = row
    return np.array(out), alpha


# metrics -----------------------------------------------------------------------

def auc_pairs(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def c_index_pairs(risks, times, censored):
    num = den = 0.0
    for i in range(len(risks)):
        if censored[i]:
            continue
        for j in range(len(risks)):
            if times[i] < times[j]:
                den += 1
                num += 1.0 if risks[i] > risks[j] else 0.5 if risks[i] == risks[j] else 0.0
    return num / den
