"""Vocabulary, segmentation and n-gram hashing.

Index space layout: in-vocabulary words occupy ``[0, v)`` in descending
frequency order, hashing buckets occupy ``[v, v + B)``. Out-of-vocabulary
words and every n-gram phrase land in a bucket chosen by
``MD5(surface) mod B`` with the digest read as a big-endian integer.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

NGRAM_SEP = "\x1f"  # ASCII unit separator, stripped from all input text
HASH_SURFACE = "‹hash:{}›"

CHARACTER = "character"
WORD = "word"


class VocabularyError(ValueError):
    pass


class SegmenterError(KeyError):
    pass


# -- segmenters -------------------------------------------------------------

def _whitespace(text: str) -> list[str]:
    return text.split()


_SEGMENTERS: dict[str, Callable[[str], list[str]]] = {"whitespace": _whitespace}


def register_segmenter(name: str, fn: Callable[[str], list[str]]) -> None:
    """Register a word segmenter under ``name`` (e.g. a Chinese segmenter)."""
    _SEGMENTERS[name] = fn


def get_segmenter(name: str) -> Callable[[str], list[str]]:
    try:
        return _SEGMENTERS[name]
    except KeyError:
        raise SegmenterError(f"unknown segmenter {name!r}; registered: {sorted(_SEGMENTERS)}") from None


def _clean(text: str) -> str:
    return text.replace(NGRAM_SEP, " ")


# -- hashing ----------------------------------------------------------------

@lru_cache(maxsize=1 << 18)
def md5_bucket(surface: str, n_buckets: int) -> int:
    digest = hashlib.md5(surface.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") % n_buckets


# -- types ------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    B: int
    ngram_order: int = 2
    segmenter_id: str = "whitespace"
    frequencies: tuple[int, ...] = ()
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.B < 1:
            raise VocabularyError("bucket count B must be >= 1")
        if self.ngram_order < 1:
            raise VocabularyError("ngram_order must be >= 1")
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise VocabularyError("duplicate surface forms in vocabulary")
        object.__setattr__(self, "_index", index)

    @property
    def v(self) -> int:
        return len(self.words)

    @property
    def size(self) -> int:
        """Total index space ``v + B``."""
        return len(self.words) + self.B

    def __contains__(self, surface: str) -> bool:
        return surface in self._index

    def lookup(self, surface: str) -> int:
        idx = self._index.get(surface)
        if idx is not None:
            return idx
        return self.v + md5_bucket(surface, self.B)

    def surface(self, index: int) -> str:
        """Human-readable name for a token index; buckets render as ``‹hash:b›``."""
        if 0 <= index < self.v:
            return self.words[index]
        if self.v <= index < self.size:
            return HASH_SURFACE.format(index - self.v)
        raise IndexError(f"token index {index} outside [0, {self.size})")

    def header(self) -> str:
        return f"deepbow-vocab v={self.v} B={self.B} ngram={self.ngram_order} seg={self.segmenter_id}"

    def to_text(self) -> str:
        freqs = self.frequencies or (0,) * self.v
        lines = [self.header()]
        lines.extend(f"{i}\t{w}\t{f}" for i, (w, f) in enumerate(zip(self.words, freqs)))
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        """Content hash used to tie checkpoints and stores to this vocabulary."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        head = lines[0].split()
        if not head or head[0] != "deepbow-vocab":
            raise VocabularyError("missing 'deepbow-vocab' header")
        try:
            kv = dict(item.split("=", 1) for item in head[1:])
            v, n_buckets, order, seg = int(kv["v"]), int(kv["B"]), int(kv["ngram"]), kv["seg"]
        except (KeyError, ValueError) as exc:
            raise VocabularyError(f"malformed vocabulary header: {lines[0]!r}") from exc
        words, freqs = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            idx, surface, freq = line.split("\t")
            if int(idx) != len(words):
                raise VocabularyError(f"line {lineno}: index {idx} out of order")
            words.append(surface)
            freqs.append(int(freq))
        if len(words) != v:
            raise VocabularyError(f"header declares v={v} but file lists {len(words)} words")
        return cls(tuple(words), n_buckets, order, seg, tuple(freqs))


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray
    surfaces: tuple[str, ...]
    granularity: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int64).reshape(-1))
        if len(self.tokens) != len(self.surfaces):
            raise ValueError("tokens and surfaces differ in length")

    def __len__(self) -> int:
        return len(self.surfaces)

    def concat(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(np.concatenate([self.tokens, other.tokens]), self.surfaces + other.surfaces, self.granularity)


# -- operations -------------------------------------------------------------

def build_vocabulary(corpus: Iterable[str], v: int, B: int, ngram_order: int = 2,
                     segmenter: str = "whitespace") -> Vocabulary:
    """Keep the ``v`` most frequent words; ties go to the lexicographically smaller form."""
    if v < 1 or B < 1:
        raise VocabularyError("v and B must both be >= 1")
    split = get_segmenter(segmenter)
    counts: Counter[str] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(split(_clean(text)))
    if n_texts == 0 or not counts:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    if v > len(counts):
        raise VocabularyError(f"vocabulary shortfall: requested v={v} but corpus has only {len(counts)} distinct words")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:v]
    return Vocabulary(tuple(w for w, _ in ranked), B, ngram_order, segmenter, tuple(c for _, c in ranked))


def lookup(vocab: Vocabulary, surface: str) -> int:
    return vocab.lookup(surface)


def segment_characters(text: str, vocab: Vocabulary) -> TokenSequence:
    chars = tuple(ch for ch in _clean(text) if not ch.isspace())
    return TokenSequence([vocab.lookup(c) for c in chars], chars, CHARACTER)


def segment_words(text: str, vocab: Vocabulary, segmenter: str | None = None) -> TokenSequence:
    split = get_segmenter(segmenter or vocab.segmenter_id)
    words = tuple(w for w in split(_clean(text)) if w)
    return TokenSequence([vocab.lookup(w) for w in words], words, WORD)


def extract_ngrams(words: TokenSequence, order: int, vocab: Vocabulary) -> TokenSequence:
    """All contiguous n-grams of length 2..order, joined with ``NGRAM_SEP``."""
    if order < 2:
        raise ValueError("n-gram order must be >= 2")
    surf = words.surfaces
    grams = tuple(NGRAM_SEP.join(surf[i:i + k]) for k in range(2, order + 1) for i in range(len(surf) - k + 1))
    return TokenSequence([vocab.lookup(g) for g in grams], grams, WORD)


def word_stream(text: str, vocab: Vocabulary) -> TokenSequence:
    """Unigrams followed by their n-gram hashing tokens, as fed to the word encoder."""
    words = segment_words(text, vocab)
    if vocab.ngram_order >= 2 and len(words) >= 2:
        return words.concat(extract_ngrams(words, vocab.ngram_order, vocab))
    return words
