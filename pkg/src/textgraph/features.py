"""Tokenization, vocabulary and sparse TF-IDF features."""
from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_SPLIT_RE = re.compile(r"[\W_]+")


class VocabularyError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [tok for tok in _SPLIT_RE.split(text.lower()) if tok]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    doc_freq: tuple[int, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        """Map tokens to indices, dropping out-of-vocabulary tokens."""
        idx = self.index
        return np.array([idx[t] for t in tokens if t in idx], dtype=np.int64)

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join(f"{t}\t{df}\n" for t, df in zip(self.tokens, self.doc_freq))

    @classmethod
    def from_text(cls, text: str) -> Vocabulary:
        toks, dfs = [], []
        for line in text.split("\n"):
            if line:
                t, df = line.split("\t")
                toks.append(t)
                dfs.append(int(df))
        return cls(tuple(toks), tuple(dfs))


def build_vocab(corpus: Sequence[Sequence[str]], min_df: int = 1, max_features: int = 50_000) -> Vocabulary:
    """Keep tokens with document frequency >= ``min_df``.

    When more than ``max_features`` survive, the most frequent are kept with
    ties broken lexicographically. Indices follow lexicographic token order.
    """
    if min_df < 1 or max_features < 1:
        raise VocabularyError("min_df and max_features must be >= 1")
    df = Counter()
    for doc in corpus:
        df.update(set(doc))
    kept = [(t, c) for t, c in df.items() if c >= min_df]
    if len(kept) > max_features:
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        kept = kept[:max_features]
    if not kept:
        raise VocabularyError(f"no token reaches min_df={min_df}")
    kept.sort()
    return Vocabulary(tuple(t for t, _ in kept), tuple(c for _, c in kept))


def idf_weights(corpus: Sequence[Sequence[str]], vocab: Vocabulary) -> np.ndarray:
    """Smoothed idf ``ln((1+N)/(1+df)) + 1`` with df counted on ``corpus``."""
    df = np.zeros(len(vocab))
    for doc in corpus:
        for j in {vocab.index[t] for t in doc if t in vocab.index}:
            df[j] += 1
    return np.log((1.0 + len(corpus)) / (1.0 + df)) + 1.0


def tfidf(corpus: Sequence[Sequence[str]], vocab: Vocabulary) -> sp.csr_matrix:
    """Raw-count tf times smoothed idf, rows L2-normalized (zero rows stay zero)."""
    idf = idf_weights(corpus, vocab)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for doc in corpus:
        counts = Counter(vocab.index[t] for t in doc if t in vocab.index)
        cols = sorted(counts)
        vals = [counts[j] * idf[j] for j in cols]
        norm = math.sqrt(math.fsum(v * v for v in vals))
        if norm > 0:
            vals = [v / norm for v in vals]
        indices.extend(cols)
        data.extend(vals)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(corpus), len(vocab)),
    )
