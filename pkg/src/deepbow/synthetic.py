"""Synthetic query/product relevance data with a known synonym table.

Products are bags of words drawn from a Zipf-like distribution. A query is
relevant to a product iff every query word occurs in the product either
literally or through its synonym.

Every product carries an anchor: a synonym-bearing word whose partner is
absent. A base query of 2-3 product words includes the anchor, and the
product is shown with four variants of it, as in search logs where one title
meets many queries:

* the base query (literal positive);
* the anchor replaced by its synonym (synonym positive);
* the anchor replaced by an intruder (hard negative);
* the base query of another product (easy negative, usually no overlap).

Intruders are partners of Zipf-drawn synonym-bearing words that the product
does not cover, the same law that yields the substituted synonym. The
synonym positive and the hard negative therefore share product, base query
and the distribution of their one missing word; only the synonym table
tells them apart. Test products are drawn independently of the training
products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .training import RelevanceExample

_CONS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"
# ideographs starting at U+4E00; a word is 2-3 of them, as in product titles
_IDEOGRAPHS = [chr(0x4E00 + 7 * i) for i in range(400)]


@dataclass
class SyntheticData:
    words: list[str]
    synonyms: dict[str, str]        # symmetric
    train: list[RelevanceExample]
    test: list[RelevanceExample]
    test_synonym_dependent: np.ndarray  # bool mask over ``test``

    def corpus(self):
        for ex in self.train:
            yield ex.query
            yield ex.product


def make_words(n: int, rng: np.random.Generator, charset: str = "cjk") -> list[str]:
    """Distinct nonsense words: 2-3 ideographs (``cjk``) or 2-3 CV syllables (``latin``)."""
    if charset not in ("cjk", "latin"):
        raise ValueError("charset must be 'cjk' or 'latin'")
    seen: set[str] = set()
    out = []
    while len(out) < n:
        k = rng.integers(2, 4)
        if charset == "cjk":
            w = "".join(_IDEOGRAPHS[i] for i in rng.integers(len(_IDEOGRAPHS), size=k))
        else:
            w = "".join(_CONS[rng.integers(len(_CONS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def relevant(query_words, product_words, synonyms) -> bool:
    prod = set(product_words)
    return all(w in prod or synonyms.get(w) in prod for w in query_words)


def synonym_dependent(query_words, product_words) -> bool:
    """True if some query word is literally absent from the product.

    The label of such an example hinges on whether the missing word is a
    synonym of a product word, which exact matching cannot see.
    """
    prod = set(product_words)
    return any(w not in prod for w in query_words)


def exact_overlap(query: str, product: str) -> float:
    """Baseline score: fraction of query words found literally in the product."""
    q = query.split()
    prod = set(product.split())
    return sum(w in prod for w in q) / len(q)


def generate(n_words: int = 2000, n_synonym_pairs: int = 200, n_train: int = 20000, n_test: int = 2000,
             seed: int = 0, zipf: float = 1.0, product_len=(6, 10), query_len=(2, 3),
             charset: str = "cjk") -> SyntheticData:
    rng = np.random.default_rng(seed)
    words = make_words(n_words, rng, charset)
    probs = 1.0 / np.arange(1, n_words + 1) ** zipf
    probs /= probs.sum()
    # synonym pairs among the more frequent half so both sides are seen often
    pool = rng.permutation(n_words // 2)[:2 * n_synonym_pairs]
    synonyms = {}
    for a, b in zip(pool[0::2], pool[1::2]):
        synonyms[words[a]] = words[b]
        synonyms[words[b]] = words[a]
    syn_idx = np.array(sorted(words.index(w) for w in synonyms))
    syn_probs = probs[syn_idx] / probs[syn_idx].sum()

    def draw_synonym_bearing():
        return words[syn_idx[rng.choice(len(syn_idx), p=syn_probs)]]

    def product_and_anchor():
        # the anchor is a synonym-bearing product word whose partner the product lacks
        while True:
            k = rng.integers(product_len[0], product_len[1] + 1)
            anchor = draw_synonym_bearing()
            rest = [words[i] for i in rng.choice(n_words, size=k - 1, replace=False, p=probs)]
            prod = list(dict.fromkeys([anchor, *rest]))
            if synonyms[anchor] not in prod:
                rng.shuffle(prod)
                return prod, anchor

    def intruder(prod, q):
        # the partner of a Zipf-drawn word: the same law that produces a
        # substituted synonym, so the word itself carries no label information
        covered = set(prod) | {synonyms[w] for w in prod if w in synonyms}
        while True:
            cand = synonyms[draw_synonym_bearing()]
            if cand not in covered and cand not in q:
                return cand

    def base_query(prod, anchor):
        others = [w for w in prod if w != anchor]
        k = min(len(prod), rng.integers(query_len[0], query_len[1] + 1))
        base = [anchor, *rng.choice(others, size=k - 1, replace=False).tolist()]
        rng.shuffle(base)
        return base

    def quartet():
        prod, anchor = product_and_anchor()
        base = base_query(prod, anchor)
        a = base.index(anchor)
        swap = lambda w: base[:a] + [w] + base[a + 1:]
        # an unrelated query: the base query of another product
        other = base_query(*product_and_anchor())
        queries = [base, swap(synonyms[anchor]), swap(intruder(prod, base)), other]
        out = []
        for q in queries:
            label = int(relevant(q, prod, synonyms))
            out.append((RelevanceExample(" ".join(q), " ".join(prod), label), synonym_dependent(q, prod)))
        return out

    def split(n):
        out = []
        while len(out) < n:
            out.extend(quartet())
        out = out[:n]
        order = rng.permutation(n)
        return [out[i][0] for i in order], np.array([out[i][1] for i in order], dtype=bool)

    train, _ = split(n_train)
    test, dep = split(n_test)
    return SyntheticData(words, synonyms, train, test, dep)
