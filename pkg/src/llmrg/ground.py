"""Deterministic lexical similarity: padded character 3-grams with tf-idf weights.

Used to score abductive fill-ins against the masked original and to ground
free-text item descriptions to catalog ids.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from typing import Iterable

import numpy as np
from scipy import sparse

from .domain import Catalog, canonicalize_label

SparseVector = dict  # 3-gram -> weight


def char_ngrams(text: str, n: int = 3) -> list[str]:
    """Padded character n-grams; ``"ab"`` gives ``["^ab", "ab$"]``."""
    if not text:
        return []
    padded = f"^{text}$"
    if len(padded) <= n:
        return [padded]
    return [padded[i:i + n] for i in range(len(padded) - n + 1)]


def build_idf(corpus: Iterable[str]) -> tuple[dict[str, float], int]:
    """Document frequencies over ``corpus`` turned into ``ln(1 + N/df)``."""
    df: Counter = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        df.update(set(char_ngrams(doc)))
    return {g: math.log1p(n_docs / c) for g, c in df.items()}, n_docs


def embed_text(text: str, idf_table: dict[str, float], n_docs: int) -> SparseVector:
    """tf * idf over padded 3-grams.

    Grams absent from the corpus are weighted as if seen once (``ln(1 + N)``);
    with an empty corpus every gram weighs 1, which reduces to raw counts.
    """
    counts = Counter(char_ngrams(text))
    if n_docs == 0:
        return {g: float(c) for g, c in counts.items()}
    unseen = math.log1p(n_docs)
    return {g: c * idf_table.get(g, unseen) for g, c in counts.items()}


def _norm(v: SparseVector) -> float:
    return math.sqrt(sum(w * w for w in v.values()))


def similarity(a: SparseVector, b: SparseVector) -> float:
    """Cosine similarity in [0, 1]; a zero vector scores 0 against anything."""
    na, nb = _norm(a), _norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    dot = sum(w * b.get(g, 0.0) for g, w in a.items())
    return min(1.0, max(0.0, dot / (na * nb)))


class Grounder:
    """idf table over catalog titles plus an exact top-k retrieval index."""

    def __init__(self, catalog: Catalog | None = None):
        self.catalog = catalog if catalog is not None else Catalog()
        titles = [canonicalize_label(it.title) for it in self.catalog.items]
        self.idf, self.n_docs = build_idf(titles)
        self._titles = titles
        self._matrix = None
        self._vocab: dict[str, int] = {}

    def embed(self, text: str) -> SparseVector:
        return embed_text(text, self.idf, self.n_docs)

    def similarity(self, a: str, b: str) -> float:
        return similarity(self.embed(a), self.embed(b))

    def _index(self):
        if self._matrix is None:
            rows, cols, vals = [], [], []
            for r, title in enumerate(self._titles):
                vec = self.embed(title)
                norm = _norm(vec)
                for g, w in sorted(vec.items()):
                    col = self._vocab.setdefault(g, len(self._vocab))
                    rows.append(r)
                    cols.append(col)
                    vals.append(w / norm)
            self._matrix = sparse.csr_matrix(
                (vals, (rows, cols)), shape=(len(self._titles), max(1, len(self._vocab))))
        return self._matrix

    def scores(self, text: str) -> np.ndarray:
        """Cosine similarity of ``text`` against every catalog title, in catalog order."""
        matrix = self._index()
        vec = self.embed(text)
        norm = _norm(vec)
        q = np.zeros(matrix.shape[1])
        if norm == 0.0:
            return np.zeros(matrix.shape[0])
        for g, w in vec.items():
            col = self._vocab.get(g)
            if col is not None:
                q[col] = w / norm
        return np.clip(matrix @ q, 0.0, 1.0)

    def retrieve_top_k(self, text: str, k: int = 1) -> list[tuple[str, float]]:
        """Exact top-k catalog items by similarity; ties go to the lower item id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not len(self.catalog):
            return []
        sims = self.scores(text)
        # lexsort: last key is primary; catalog position already follows item id order
        order = np.lexsort((np.arange(len(sims)), -sims))[:k]
        ids = self.catalog.ids
        return [(ids[i], float(sims[i])) for i in order]

    def save_idf(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"n_docs": self.n_docs, "idf": dict(sorted(self.idf.items()))}, fh)

    @classmethod
    def load_idf(cls, path, catalog: Catalog) -> "Grounder":
        g = cls.__new__(cls)
        g.catalog = catalog
        g._titles = [canonicalize_label(it.title) for it in catalog.items]
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        g.idf, g.n_docs = data["idf"], data["n_docs"]
        g._matrix, g._vocab = None, {}
        return g
