"""Sparse and dense bag-of-words representations.

A ``SparseBoW`` is the served form: token indices strictly ascending with
strictly positive float32 weights. Dense vectors come out of the expansion
head and are cut down by ``truncate_topk`` or ``truncate_threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import sigmoid
from .encoder import attention_pool


class SparseBoWError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseBoW:
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "weights", np.ascontiguousarray(self.weights, dtype=np.float32).reshape(-1))
        if self.indices.shape != self.weights.shape:
            raise SparseBoWError("indices and weights differ in length")

    @classmethod
    def empty(cls) -> "SparseBoW":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.float32))

    @classmethod
    def from_pairs(cls, pairs) -> "SparseBoW":
        """Build from (index, weight) pairs in any order; indices must be unique."""
        pairs = sorted(pairs)
        out = cls(np.array([i for i, _ in pairs], np.int64), np.array([w for _, w in pairs], np.float32))
        out.validate()
        return out

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseBoW):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(
            self.weights.view(np.uint32), other.weights.view(np.uint32))

    def __iter__(self):
        return zip(self.indices.tolist(), self.weights.tolist())

    def total(self) -> float:
        return float(self.weights.astype(np.float64).sum())

    def validate(self, n_tokens: int | None = None) -> "SparseBoW":
        idx = self.indices
        if len(idx) > 1 and not (np.diff(idx) > 0).all():
            raise SparseBoWError("indices must be strictly increasing")
        if len(idx) and idx[0] < 0:
            raise SparseBoWError("negative token index")
        if n_tokens is not None and len(idx) and idx[-1] >= n_tokens:
            raise SparseBoWError(f"token index {int(idx[-1])} outside [0, {n_tokens})")
        if not (self.weights > 0).all():
            raise SparseBoWError("weights must be strictly positive")
        return self


@dataclass(frozen=True)
class DenseBoW:
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64).reshape(-1))


def _compact(indices, weights) -> SparseBoW:
    w32 = np.asarray(weights, dtype=np.float32)
    keep = w32 > 0
    return SparseBoW(np.asarray(indices)[keep], w32[keep])


def _tokens(words) -> np.ndarray:
    return np.asarray(getattr(words, "tokens", words), dtype=np.int64).reshape(-1)


def merge_weights(tokens, weights) -> SparseBoW:
    """Sum weights of repeated tokens and sort by index."""
    tokens = _tokens(tokens)
    uniq, inv = np.unique(tokens, return_inverse=True)
    summed = np.zeros(len(uniq))
    np.add.at(summed, inv, np.asarray(weights, dtype=np.float64))
    return _compact(uniq, summed)


def term_weighting_bow(h_c, H_w, words) -> SparseBoW:
    tokens = _tokens(words)
    if len(tokens) == 0:
        raise ValueError("term weighting needs at least one word")
    return merge_weights(tokens, attention_pool(h_c, H_w))


def synonym_expansion_dense(h_c, h_tilde_w, heads: dict, words, n_tokens: int | None = None) -> DenseBoW:
    """Gate-mixed expansion vector for one text.

    ``heads`` holds ``head.wc``/``head.bc``, ``head.ww``/``head.bw`` and
    ``head.wg``/``head.bg``. Positions in the text's own token set mix the
    two projections through the scalar gate; all others take the
    character-side projection alone.
    """
    h_c = np.asarray(h_c, dtype=np.float64)
    h_t = np.asarray(h_tilde_w, dtype=np.float64)
    wc, bc, ww, bw, wg, bg = (heads[k] for k in ("head.wc", "head.bc", "head.ww", "head.bw", "head.wg", "head.bg"))
    d = h_c.shape[0]
    n = wc.shape[1] if n_tokens is None else n_tokens
    if wc.shape != (d, n) or ww.shape != (2 * d, n) or wg.shape != (2 * d, 1) or bc.shape != (n,) \
            or bw.shape != (n,) or bg.shape != (1,):
        raise ValueError("expansion head shapes do not match d and the index space")
    z = np.concatenate([h_c, h_t])
    vc = sigmoid(h_c @ wc + bc)
    vw = sigmoid(z @ ww + bw)
    pg = sigmoid(z @ wg + bg)[0]
    out = vc.copy()
    member = np.unique(_tokens(words))
    out[member] = pg * vc[member] + (1.0 - pg) * vw[member]
    return DenseBoW(out)


def truncate_topk(dense, k: int) -> SparseBoW:
    """Keep the ``k`` largest weights; equal weights prefer the smaller index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    w = np.asarray(getattr(dense, "weights", dense), dtype=np.float64)
    nz = np.flatnonzero(w > 0)
    if len(nz) > k:
        order = np.lexsort((nz, -w[nz]))[:k]
        nz = np.sort(nz[order])
    return _compact(nz, w[nz])


def truncate_threshold(dense, tau: float) -> SparseBoW:
    """Keep weights ``>= tau`` (zero weights are never kept)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    w = np.asarray(getattr(dense, "weights", dense), dtype=np.float64)
    keep = np.flatnonzero((w >= tau) & (w > 0))
    return _compact(keep, w[keep])


def avg_bow(words) -> SparseBoW:
    tokens = _tokens(words)
    if len(tokens) == 0:
        raise ValueError("average BoW needs at least one word")
    return merge_weights(tokens, np.full(len(tokens), 1.0 / len(tokens)))
