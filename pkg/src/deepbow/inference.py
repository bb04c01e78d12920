"""Text to sparse representation with a trained model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .bow import DenseBoW, SparseBoW, merge_weights, truncate_threshold, truncate_topk
from .scoring import Q_SYNONYM, Q_WEIGHT
from .vocab import Vocabulary

QUERY = "query"
PRODUCT = "product"


class ModelVocabMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Truncation:
    """How a dense expansion vector becomes a stored posting list."""
    mode: str = "threshold"  # "threshold" | "topk" | "none"
    k: int = 128
    tau: float = 0.4

    def __post_init__(self):
        if self.mode not in ("threshold", "topk", "none"):
            raise ValueError(f"unknown truncation mode {self.mode!r}")

    def apply(self, dense) -> SparseBoW:
        if self.mode == "topk":
            return truncate_topk(dense, self.k)
        return truncate_threshold(dense, self.tau if self.mode == "threshold" else 0.0)

    def to_dict(self) -> dict:
        if self.mode == "topk":
            return {"mode": "topk", "k": self.k}
        if self.mode == "threshold":
            return {"mode": "threshold", "tau": self.tau}
        return {"mode": "none"}

    @classmethod
    def from_dict(cls, d: dict) -> "Truncation":
        return cls(d.get("mode", "threshold"), int(d.get("k", 128)), float(d.get("tau", 0.4)))


NO_TRUNCATION = Truncation("none")


@dataclass
class Encoded:
    """Network outputs for one text."""
    words: np.ndarray    # word-stream token indices
    p: np.ndarray        # term weights over ``words``
    dense: np.ndarray    # expansion vector over the index space

    def term_weighting(self) -> SparseBoW:
        return merge_weights(self.words, self.p)


class DeepBoW:
    def __init__(self, params: dict, config: M.ModelConfig, vocab: Vocabulary, model_hash: str = ""):
        if config.n_tokens != vocab.size:
            raise ModelVocabMismatch(f"model index space {config.n_tokens} != vocabulary size {vocab.size}")
        self.params = params
        self.config = config
        self.vocab = vocab
        self.model_hash = model_hash

    @classmethod
    def load(cls, checkpoint_path, vocab: Vocabulary) -> "DeepBoW":
        ckpt = M.load_checkpoint(checkpoint_path)
        if ckpt.vocab_hash and ckpt.vocab_hash != vocab.digest:
            raise ModelVocabMismatch("checkpoint was trained with a different vocabulary "
                                     f"({ckpt.vocab_hash[:12]} != {vocab.digest[:12]})")
        return cls(ckpt.params, ckpt.config, vocab, ckpt.digest)

    def inputs(self, text: str) -> M.TextInputs:
        return M.text_inputs(text, self.vocab, self.config.max_len)

    def run(self, texts, batch_size: int = 64) -> list[Encoded | None]:
        """Encode texts in length-sorted batches; empty segmentations map to None."""
        items = [self.inputs(t) for t in texts]
        ok = [i for i, it in enumerate(items) if len(it.chars) and len(it.words)]
        ok.sort(key=lambda i: items[i].n_tokens)
        out: list[Encoded | None] = [None] * len(items)
        for start in range(0, len(ok), batch_size):
            rows = ok[start:start + batch_size]
            batch = M.Batch.from_inputs([items[i] for i in rows], self.config.n_tokens)
            res = M.forward(self.params, self.config, batch)
            for r, i in enumerate(rows):
                n = len(items[i].words)
                out[i] = Encoded(items[i].words, res["p"][r, :n].copy(), res["g"][r].copy())
        return out

    def encode_one(self, text: str) -> Encoded:
        enc = self.run([text])[0]
        if enc is None:
            raise ValueError(f"text has no tokens after segmentation: {text!r}")
        return enc

    def dense(self, text: str) -> DenseBoW:
        return DenseBoW(self.encode_one(text).dense)

    def represent(self, encoded: Encoded, side: str, mode: str, truncation: Truncation) -> SparseBoW:
        if side == QUERY and mode == Q_WEIGHT:
            return encoded.term_weighting()
        if side not in (QUERY, PRODUCT) or mode not in (Q_WEIGHT, Q_SYNONYM):
            raise ValueError(f"bad side/mode: {side!r}/{mode!r}")
        return truncation.apply(encoded.dense)

    def encode(self, text: str, side: str, mode: str = Q_SYNONYM,
               truncation: Truncation = NO_TRUNCATION) -> SparseBoW:
        return self.represent(self.encode_one(text), side, mode, truncation)
