"""Shared oracles and generators for the test suite."""

import json
from pathlib import Path

import numpy as np

from deepbow.bow import SparseBoW
from deepbow.vocab import Vocabulary

DATA = Path(__file__).parent / "data"


def random_sparse(rng, max_support, index_space, min_support=0):
    n = int(rng.integers(min_support, max_support + 1))
    idx = np.sort(rng.choice(index_space, size=n, replace=False))
    w = rng.uniform(1e-3, 1.0, size=n).astype(np.float32)
    return SparseBoW(idx, w)


def dot_oracle(a, b):
    """Hash-map dot product, accumulated in ascending index order in float64."""
    table = {int(i): float(w) for i, w in zip(a.indices, a.weights)}
    total = 0.0
    for i, w in sorted(zip(b.indices.tolist(), b.weights.tolist())):
        if i in table:
            total += table[i] * float(w)
    return total


def golden_case():
    """Case-1 query and product lists as SparseBoW over a vocabulary of their surfaces."""
    raw = json.loads((DATA / "golden_case.json").read_text(encoding="utf-8"))
    surfaces = sorted({s for s, _ in raw["query"]} | {s for s, _ in raw["product"]})
    vocab = Vocabulary(tuple(surfaces), 1)
    q = SparseBoW.from_pairs([(vocab.lookup(s), w) for s, w in raw["query"]])
    d = SparseBoW.from_pairs([(vocab.lookup(s), w) for s, w in raw["product"]])
    return q, d, vocab, raw


def fd_check(loss_fn, params, grads, rng, per_tensor=6, step=1e-4, floor=1e-9):
    """Central finite differences on sampled entries of every tensor.

    Always probes each tensor's largest-gradient entry. Returns the worst
    relative error and the offending (name, index). Differences below
    ``floor`` in absolute terms count as agreement.
    """
    worst, where = 0.0, None
    for name in sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        picks = set(rng.choice(flat.size, size=min(per_tensor, flat.size), replace=False).tolist())
        picks.add(int(np.argmax(np.abs(g))))
        for i in sorted(picks):
            old = flat[i]
            flat[i] = old + step
            up = loss_fn()
            flat[i] = old - step
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2 * step)
            diff = abs(num - g[i])
            if diff <= floor:
                continue
            rel = diff / max(abs(num), abs(g[i]))
            if rel > worst:
                worst, where = rel, (name, i, g[i], num)
    return worst, where


def random_batch(rng, n_items, n_tokens, max_chars=7, max_words=5):
    from deepbow import model as M
    items = []
    for _ in range(n_items):
        lc, lw = rng.integers(2, max_chars), rng.integers(1, max_words)
        items.append(M.TextInputs(rng.integers(0, n_tokens, lc), rng.integers(0, n_tokens, lw), ()))
    return M.Batch.from_inputs(items, n_tokens)


def roc_auc_bruteforce(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def average_precision_bruteforce(scores, positives):
    """Sum over distinct thresholds of (recall gained) x (precision at threshold)."""
    n_pos = sum(positives)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        sel = [y for s, y in zip(scores, positives) if s >= t]
        tp = sum(sel)
        recall = tp / n_pos
        total += (recall - prev_recall) * (tp / len(sel))
        prev_recall = recall
    return total
