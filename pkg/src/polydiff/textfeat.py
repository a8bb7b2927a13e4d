"""Text to hashed TF-IDF features.

The chain is clean -> tokenize -> remove stopwords -> n-grams -> hashing TF
-> IDF. Every step is a pure function; only the IDF fit needs a pass over the
corpus, and its state (per-index document frequencies) merges by addition.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import mmh3
import numpy as np

DEFAULT_DIM = 1 << 14
HASH_SEED = 42

_NON_ALNUM = re.compile(r"[\W_]+")


@dataclass(eq=False)
class SparseVector:
    """Sorted (index, value) representation of a length-``dim`` vector."""

    dim: int
    idx: np.ndarray
    val: np.ndarray

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.float64)
        if self.idx.shape != self.val.shape or self.idx.ndim != 1:
            raise ValueError("idx and val must be 1-d arrays of equal length")
        if self.idx.size:
            if self.idx[0] < 0 or self.idx[-1] >= self.dim:
                raise ValueError(f"index out of range for dim {self.dim}")
            if np.any(np.diff(self.idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if np.any(self.val == 0):
                raise ValueError("explicit zeros are not allowed")

    @classmethod
    def from_dense(cls, x) -> "SparseVector":
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(x.size, nz, x[nz])

    @classmethod
    def from_dict(cls, dim: int, entries: dict) -> "SparseVector":
        keys = sorted(k for k, v in entries.items() if v != 0)
        return cls(dim, keys, [entries[k] for k in keys])

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(dim, [], [])

    @property
    def nnz(self) -> int:
        return int(self.idx.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.idx] = self.val
        return out

    def support(self) -> set[int]:
        return set(self.idx.tolist())

    def norm(self) -> float:
        return math.sqrt(float(np.dot(self.val, self.val)))

    def dot(self, other: "SparseVector") -> float:
        _, ia, ib = np.intersect1d(self.idx, other.idx, assume_unique=True, return_indices=True)
        return float(np.dot(self.val[ia], other.val[ib]))

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.idx, other.idx)
            and np.array_equal(self.val, other.val)
        )

    def __repr__(self):
        return f"SparseVector(dim={self.dim}, nnz={self.nnz})"

    def to_json(self) -> str:
        # repr() of a float round-trips exactly, which json.dumps relies on
        return json.dumps(
            {"dim": self.dim, "idx": self.idx.tolist(), "val": self.val.tolist()},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "SparseVector":
        doc = json.loads(text)
        return cls(int(doc["dim"]), doc["idx"], doc["val"])


def load_stopwords(path=None) -> frozenset[str]:
    """The vendored English list, or one word per line from ``path``."""
    if path is None:
        text = resources.files("polydiff").joinpath("data/stopwords_en.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


def clean(raw: str) -> str:
    return _NON_ALNUM.sub(" ", raw.lower()).strip()


def tokenize(cleaned: str) -> list[str]:
    return [t for t in _NON_ALNUM.split(cleaned) if t]


def remove_stopwords(tokens: Sequence[str], stoplist: Iterable[str]) -> list[str]:
    stop = stoplist if isinstance(stoplist, (set, frozenset)) else set(stoplist)
    return [t for t in tokens if t not in stop]


def ngrams(tokens: Sequence[str], n: int) -> list[str]:
    if n < 1:
        raise ValueError(f"n-gram size must be >= 1, got {n}")
    if n == 1:
        return list(tokens)
    return [" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def term_index(term: str, dim: int) -> int:
    # Python's % already yields ((h mod d) + d) mod d for signed h
    return mmh3.hash(term.encode("utf-8"), HASH_SEED, signed=True) % dim


def hashing_tf(terms: Iterable[str], dim: int = DEFAULT_DIM) -> SparseVector:
    if dim < 1:
        raise ValueError(f"feature dimension must be >= 1, got {dim}")
    counts: dict[int, float] = {}
    for term in terms:
        i = term_index(term, dim)
        counts[i] = counts.get(i, 0.0) + 1.0
    return SparseVector.from_dict(dim, counts)


@dataclass
class IdfModel:
    dim: int
    doc_count: int
    doc_freq: np.ndarray
    idf_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.doc_freq = np.asarray(self.doc_freq, dtype=np.int64)
        if self.doc_count < 1:
            raise ValueError("IDF needs at least one document")
        if self.doc_freq.shape != (self.dim,):
            raise ValueError("doc_freq length must equal dim")
        self.idf_weights = np.log((self.doc_count + 1.0) / (self.doc_freq + 1.0))


def doc_freq_partial(vectors: Iterable[SparseVector], dim: int) -> tuple[int, np.ndarray]:
    """Per-partition (document count, document frequency) state for the IDF fit."""
    df = np.zeros(dim, dtype=np.int64)
    n = 0
    for v in vectors:
        if v.dim != dim:
            raise ValueError(f"vector dim {v.dim} != {dim}")
        df[v.idx] += 1
        n += 1
    return n, df


def combine_doc_freq(parts: Iterable[tuple[int, np.ndarray]]) -> tuple[int, np.ndarray]:
    total, acc = 0, None
    for n, df in parts:
        total += n
        acc = df.copy() if acc is None else acc + df
    return total, acc


def fit_idf(vectors: Iterable[SparseVector], dim: int | None = None) -> IdfModel:
    vectors = iter(vectors)
    if dim is None:
        first = next(vectors, None)
        if first is None:
            raise ValueError("cannot fit IDF on an empty corpus")
        dim = first.dim
        n, df = doc_freq_partial([first], dim)
        n2, df2 = doc_freq_partial(vectors, dim)
        n, df = n + n2, df + df2
    else:
        n, df = doc_freq_partial(vectors, dim)
    if n == 0:
        raise ValueError("cannot fit IDF on an empty corpus")
    return IdfModel(dim, n, df)


def apply_idf(model: IdfModel, v: SparseVector) -> SparseVector:
    if v.dim != model.dim:
        raise ValueError(f"vector dim {v.dim} != IDF dim {model.dim}")
    weighted = v.val * model.idf_weights[v.idx]
    keep = weighted != 0
    return SparseVector(v.dim, v.idx[keep], weighted[keep])


@dataclass(frozen=True)
class Featurizer:
    """Bundles the per-document part of the chain (everything before IDF)."""

    dim: int = DEFAULT_DIM
    ngram: int = 1
    stopwords: frozenset = field(default_factory=load_stopwords)

    def terms(self, raw: str) -> list[str]:
        tokens = remove_stopwords(tokenize(clean(raw)), self.stopwords)
        if self.ngram == 1:
            return tokens
        # unigrams and n-grams share the hashed space and add up
        return tokens + ngrams(tokens, self.ngram)

    def tf(self, raw: str) -> SparseVector:
        return hashing_tf(self.terms(raw), self.dim)
