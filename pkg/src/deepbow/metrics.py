"""Ranking metrics and the pairwise scoring latency benchmark."""

from __future__ import annotations

import time

import numpy as np


class UndefinedMetricError(ValueError):
    pass


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    mean_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """P(random Good outscores random Bad), ties counted as one half."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both Good and Bad examples")
    ranks = _average_ranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(det_scores, positives) -> float:
    """Step-interpolated area under the precision-recall curve.

    Tied scores form one threshold; the precision at that threshold is
    credited with all the recall it adds.
    """
    det_scores, positives = _as_arrays(det_scores, positives)
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PR-AUC needs at least one positive example")
    order = np.argsort(-det_scores, kind="mergesort")
    s = det_scores[order]
    y = positives[order]
    last = np.r_[s[1:] != s[:-1], True]  # final element of each tie group
    tp = np.cumsum(y)[last]
    seen = np.flatnonzero(last) + 1
    precision = tp / seen
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float((recall_gain * precision).sum())


def neg_pr_auc(scores, labels) -> float:
    """PR-AUC for detecting Bad pairs: Bad is the positive class, 1 - score the detector."""
    scores, labels = _as_arrays(scores, labels)
    return average_precision(1.0 - scores, 1 - labels)


def evaluation_report(scores, labels) -> dict:
    scores, labels = _as_arrays(scores, labels)
    n_good = int(labels.sum())
    return {
        "roc_auc": roc_auc(scores, labels),
        "neg_pr_auc": neg_pr_auc(scores, labels),
        "n": int(len(labels)),
        "n_good": n_good,
        "n_bad": int(len(labels) - n_good),
    }


def bench_latency(query_store, product_store, pairs, mode: str = "q_synonym", reps: int = 20,
                  warmup: int = 2) -> dict:
    """Time scoring of ``pairs`` (qid, pid) over preloaded stores, one thread.

    Encoding is excluded; id resolution happens once before timing. Each
    repetition scores the whole batch and is timed as a unit.
    """
    from .scoring import score_batch

    q_rows = np.array([query_store.row(q) for q, _ in pairs], dtype=np.int64)
    d_rows = np.array([product_store.row(p) for _, p in pairs], dtype=np.int64)
    if len(pairs) == 0:
        return {"pairs": 0, "reps": reps, "min_us": 0.0, "mean_us": 0.0, "p99_us": 0.0,
                "adds_per_pair_mean": 0.0, "advances_per_pair_mean": 0.0, "max_advance_excess": 0}
    args = (query_store.indptr, query_store.indices, query_store.weights,
            product_store.indptr, product_store.indices, product_store.weights, q_rows, d_rows, mode)
    for _ in range(warmup):
        score_batch(*args)
    times = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter_ns()
        _, advances, adds = score_batch(*args)
        times[r] = (time.perf_counter_ns() - t0) / 1e3
    sizes = (np.diff(query_store.indptr)[q_rows] + np.diff(product_store.indptr)[d_rows])
    return {
        "pairs": len(pairs),
        "reps": reps,
        "min_us": float(times.min()),
        "mean_us": float(times.mean()),
        "p99_us": float(np.percentile(times, 99)),
        "adds_per_pair_mean": float(adds.mean()),
        "advances_per_pair_mean": float(advances.mean()),
        "max_advance_excess": int((advances - sizes).max()),
    }
