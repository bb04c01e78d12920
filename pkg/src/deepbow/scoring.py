"""Relevance scores over sparse BoW representations.

The core is a two-cursor merge over index-sorted postings. Each cursor only
moves forward, so a pair costs at most ``|a| + |b|`` advances; the kernels
return that advance count so tests can check it. Products are taken in
float64 from the float32 stored weights and accumulated in ascending index
order, which makes the numba and numpy paths bit-identical.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._accel import HAS_NUMBA, njit
from .bow import SparseBoW, avg_bow

Q_WEIGHT = "q_weight"
Q_SYNONYM = "q_synonym"
MODES = (Q_WEIGHT, Q_SYNONYM)


class DegenerateQueryWarning(UserWarning):
    """Query representation has no mass; its synonym score is defined as 0."""


# -- kernels ----------------------------------------------------------------

@njit(cache=True)
def _dot_nb(ai, aw, bi, bw):
    i = 0
    j = 0
    na = ai.shape[0]
    nb = bi.shape[0]
    total = 0.0
    adds = 0
    while i < na and j < nb:
        x = ai[i]
        y = bi[j]
        if x == y:
            total += np.float64(aw[i]) * np.float64(bw[j])
            adds += 1
            i += 1
            j += 1
        elif x < y:
            i += 1
        else:
            j += 1
    return total, i + j, adds


@njit(cache=True)
def _batch_nb(q_ptr, q_idx, q_w, d_ptr, d_idx, d_w, q_rows, d_rows, normalize):
    n = q_rows.shape[0]
    scores = np.zeros(n)
    advances = np.zeros(n, dtype=np.int64)
    adds = np.zeros(n, dtype=np.int64)
    for k in range(n):
        qa, qb = q_ptr[q_rows[k]], q_ptr[q_rows[k] + 1]
        da, db = d_ptr[d_rows[k]], d_ptr[d_rows[k] + 1]
        total, adv, nadd = _dot_nb(q_idx[qa:qb], q_w[qa:qb], d_idx[da:db], d_w[da:db])
        if normalize:
            c = 0.0
            for t in range(qa, qb):
                c += np.float64(q_w[t])
            total = total / c if c > 0.0 else 0.0
        scores[k] = total
        advances[k] = adv
        adds[k] = nadd
    return scores, advances, adds


def _dot_np(ai, aw, bi, bw):
    if len(ai) == 0 or len(bi) == 0:
        return 0.0, 0, 0
    _, ia, ib = np.intersect1d(ai, bi, assume_unique=True, return_indices=True)
    if len(ia):
        total = float(np.cumsum(aw[ia].astype(np.float64) * bw[ib].astype(np.float64))[-1])
    else:
        total = 0.0
    # advances the merge loop would make before one cursor runs off its list
    if ai[-1] < bi[-1]:
        adv = len(ai) + int(np.searchsorted(bi, ai[-1], side="right"))
    elif bi[-1] < ai[-1]:
        adv = len(bi) + int(np.searchsorted(ai, bi[-1], side="right"))
    else:
        adv = len(ai) + len(bi)
    return total, adv, len(ia)


def _batch_np(q_ptr, q_idx, q_w, d_ptr, d_idx, d_w, q_rows, d_rows, normalize):
    n = len(q_rows)
    scores = np.zeros(n)
    advances = np.zeros(n, dtype=np.int64)
    adds = np.zeros(n, dtype=np.int64)
    for k in range(n):
        qa, qb = q_ptr[q_rows[k]], q_ptr[q_rows[k] + 1]
        da, db = d_ptr[d_rows[k]], d_ptr[d_rows[k] + 1]
        total, adv, nadd = _dot_np(q_idx[qa:qb], q_w[qa:qb], d_idx[da:db], d_w[da:db])
        if normalize:
            c = float(np.cumsum(q_w[qa:qb].astype(np.float64))[-1]) if qb > qa else 0.0
            total = total / c if c > 0.0 else 0.0
        scores[k] = total
        advances[k] = adv
        adds[k] = nadd
    return scores, advances, adds


if HAS_NUMBA:
    _dot_kernel, _batch_kernel = _dot_nb, _batch_nb
else:
    _dot_kernel, _batch_kernel = _dot_np, _batch_np


# -- public operations ------------------------------------------------------

def intersect_dot(a: SparseBoW, b: SparseBoW, check: bool = True, return_advances: bool = False):
    """Sum of ``a.w * b.w`` over shared indices via a single forward merge."""
    if check:
        a.validate()
        b.validate()
    total, adv, _ = _dot_kernel(a.indices, a.weights, b.indices, b.weights)
    total = float(total)
    return (total, int(adv)) if return_advances else total


def score_q_weight(q: SparseBoW, d: SparseBoW) -> float:
    return intersect_dot(q, d)


def score_q_synonym(q: SparseBoW, d: SparseBoW) -> float:
    """Expansion-query score, normalized by the query's total weight."""
    c = q_mass(q)
    if c <= 0.0:
        warnings.warn("degenerate query: empty representation scores 0", DegenerateQueryWarning, stacklevel=2)
        return 0.0
    return intersect_dot(q, d) / c


def q_mass(q: SparseBoW) -> float:
    if len(q) == 0:
        return 0.0
    return float(np.cumsum(q.weights.astype(np.float64))[-1])


def score_avg(q_words, d: SparseBoW) -> float:
    return intersect_dot(avg_bow(q_words), d)


def score(q: SparseBoW, d: SparseBoW, mode: str) -> float:
    if mode == Q_WEIGHT:
        return score_q_weight(q, d)
    if mode == Q_SYNONYM:
        return score_q_synonym(q, d)
    raise ValueError(f"unknown scoring mode {mode!r}; expected one of {MODES}")


def score_batch(q_ptr, q_idx, q_w, d_ptr, d_idx, d_w, q_rows, d_rows, mode: str):
    """Score many (query row, product row) pairs over CSR-packed postings.

    Returns ``(scores, advances, adds)`` arrays aligned with the row arrays.
    """
    if mode not in MODES:
        raise ValueError(f"unknown scoring mode {mode!r}")
    return _batch_kernel(q_ptr, q_idx, q_w, d_ptr, d_idx, d_w,
                         np.asarray(q_rows, dtype=np.int64), np.asarray(d_rows, dtype=np.int64),
                         mode == Q_SYNONYM)


# -- explanations -----------------------------------------------------------

@dataclass
class MatchRow:
    index: int
    term: str
    p: float
    g: float
    pg: float

    def to_dict(self) -> dict:
        return {"term": self.term, "index": self.index, "p": self.p, "g": self.g, "pg": self.pg}


@dataclass
class MatchExplanation:
    matches: list[MatchRow] = field(default_factory=list)
    total: float = 0.0
    mode: str = Q_SYNONYM
    query_mass: float = 1.0

    def to_dict(self) -> dict:
        return {"matches": [m.to_dict() for m in self.matches], "total": self.total, "mode": self.mode}

    def format(self) -> str:
        if not self.matches:
            return f"no matching terms; score = {self.total:.5g}"
        terms = " + ".join(f"{m.p:.5g} x {m.g:.5g}" for m in self.matches)
        norm = "" if self.mode == Q_WEIGHT or self.query_mass == 1.0 else f" / {self.query_mass:.5g}"
        lines = [f"{m.term}\t{m.p:.5g}\t{m.g:.5g}\t{m.pg:.5g}" for m in self.matches]
        return "\n".join(lines + [f"({terms}){norm} = {self.total:.5g}"])


def explain(q: SparseBoW, d: SparseBoW, vocab=None, mode: str = Q_SYNONYM) -> MatchExplanation:
    """Per-term breakdown of a score; rows follow ascending token index.

    Contributions ``pg`` are the raw products; in synonym mode the total is
    their sum divided by the query mass, matching ``score_q_synonym``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown scoring mode {mode!r}")
    q.validate()
    d.validate()
    _, ia, ib = np.intersect1d(q.indices, d.indices, assume_unique=True, return_indices=True)
    rows = []
    for i, j in zip(ia.tolist(), ib.tolist()):
        idx = int(q.indices[i])
        p, g = float(q.weights[i]), float(d.weights[j])
        term = vocab.surface(idx) if vocab is not None else str(idx)
        rows.append(MatchRow(idx, term, p, g, p * g))
    if mode == Q_SYNONYM:
        mass = q_mass(q)
        total = score_q_synonym(q, d) if mass > 0 else 0.0
    else:
        mass = 1.0
        total = score_q_weight(q, d)
    return MatchExplanation(rows, total, mode, mass)
