"""Character n-gram TF-IDF vectorizer for the threat-classification layer.

idf(t) = ln((1 + N) / (1 + df(t))) + 1, raw term counts, L2-normalised rows.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus
from .sparse import SparseVector

VOCAB_FORMAT = "tfidf/1"


@dataclass(frozen=True)
class NgramConfig:
    min_n: int = 1
    max_n: int = 4
    lowercase: bool = True
    max_features: int | None = 50_000

    def __post_init__(self):
        if self.min_n < 1 or self.max_n < self.min_n:
            raise ValueError(f"invalid n-gram range ({self.min_n}, {self.max_n})")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be positive or None")

    @property
    def ngram_range(self) -> tuple[int, int]:
        return (self.min_n, self.max_n)


def tokenize(text: str, config: NgramConfig) -> list[str]:
    if config.lowercase:
        text = text.lower()
    L = len(text)
    tokens = []
    for n in range(config.min_n, config.max_n + 1):
        tokens.extend(text[i:i + n] for i in range(L - n + 1))
    return tokens


@dataclass(frozen=True)
class TfidfVocabulary:
    tokens: tuple[str, ...]
    idf: np.ndarray
    n_documents: int
    config: NgramConfig
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {
            "format": VOCAB_FORMAT,
            "config": {
                "min_n": self.config.min_n,
                "max_n": self.config.max_n,
                "lowercase": self.config.lowercase,
                "max_features": self.config.max_features,
            },
            "n_documents": self.n_documents,
            "tokens": list(self.tokens),
            "idf": [float(x) for x in self.idf],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TfidfVocabulary":
        if data.get("format") != VOCAB_FORMAT:
            raise ValueError(f"unknown vocabulary format {data.get('format')!r}")
        config = NgramConfig(**data["config"])
        tokens = tuple(data["tokens"])
        idf = np.asarray(data["idf"], dtype=np.float64)
        if idf.shape != (len(tokens),):
            raise ValueError("idf length does not match token count")
        if any(not isinstance(t, str) or not t for t in tokens):
            raise ValueError("tokens must be non-empty strings")
        if any(a >= b for a, b in zip(tokens, tokens[1:])):
            raise ValueError("tokens must be unique and sorted")
        if idf.size and (not np.all(np.isfinite(idf)) or idf.min() < 1.0):
            raise ValueError("idf values must be finite and >= 1")
        n_docs = data["n_documents"]
        if not isinstance(n_docs, int) or n_docs < 1:
            raise ValueError("n_documents must be a positive int")
        return cls(tokens, idf, n_docs, config)


def fit_vocabulary(corpus: Sequence[str], config: NgramConfig | None = None) -> TfidfVocabulary:
    config = config or NgramConfig()
    if not corpus:
        raise EmptyCorpus("cannot fit a vocabulary on an empty corpus")
    df: Counter = Counter()
    for doc in corpus:
        df.update(set(tokenize(doc, config)))
    kept = list(df)
    if config.max_features is not None and len(kept) > config.max_features:
        kept.sort(key=lambda t: (-df[t], t))
        kept = kept[:config.max_features]
    kept.sort()
    n = len(corpus)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in kept], dtype=np.float64)
    return TfidfVocabulary(tuple(kept), idf, n, config)


def transform(vocab: TfidfVocabulary, text: str) -> SparseVector:
    index = vocab.index
    counts: Counter = Counter()
    for tok in tokenize(text, vocab.config):
        j = index.get(tok)
        if j is not None:
            counts[j] += 1
    if not counts:
        return SparseVector()
    idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    weights = np.array([counts[j] for j in idx.tolist()], dtype=np.float64) * vocab.idf[idx]
    norm = math.sqrt(float(np.dot(weights, weights)))
    return SparseVector(idx, weights / norm)


def transform_many(vocab: TfidfVocabulary, texts: Iterable[str]) -> list[SparseVector]:
    return [transform(vocab, t) for t in texts]
