"""Text featurization: tokens, vocabulary, TF-IDF, word-vector tables and
sentence/token matrices."""
from __future__ import annotations

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_VOCAB_CAP = 6000
SIF_A = 1e-3
_TOKEN = re.compile(r"[^\W_]+")
_SENTENCE_BREAK = re.compile(r"[.!?\n]")


@lru_cache(maxsize=None)
def stop_words() -> frozenset[str]:
    text = resources.files("mmfusion").joinpath("data/stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.split() if w.strip())


def tokenize(text: str, stop: Iterable[str] | None = None) -> list[str]:
    """Lowercased runs of letters/digits, stop words removed."""
    stop = stop_words() if stop is None else frozenset(stop)
    return [t for t in _TOKEN.findall(text.lower()) if t not in stop]


def split_sentences(text: str, stop: Iterable[str] | None = None) -> list[list[str]]:
    """Token lists per sentence; sentences break on . ! ? and newlines."""
    out = []
    for chunk in _SENTENCE_BREAK.split(text):
        toks = tokenize(chunk, stop)
        if toks:
            out.append(toks)
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict
    doc_freq: np.ndarray    # documents containing each token
    unigram: np.ndarray     # corpus probability, sums to 1 over the vocabulary
    n_docs: int

    def __len__(self):
        return len(self.tokens)

    def probability(self, token: str) -> float:
        i = self.index.get(token)
        return 0.0 if i is None else float(self.unigram[i])

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "doc_freq": self.doc_freq.tolist(),
                "unigram": self.unigram.tolist(), "n_docs": self.n_docs}

    @classmethod
    def from_dict(cls, blob: dict) -> "Vocabulary":
        toks = tuple(blob["tokens"])
        return cls(toks, {t: i for i, t in enumerate(toks)},
                   np.array(blob["doc_freq"], dtype=np.float64),
                   np.array(blob["unigram"], dtype=np.float64), int(blob["n_docs"]))


def fit_vocabulary(corpus: Sequence[str], cap: int = DEFAULT_VOCAB_CAP,
                   stop: Iterable[str] | None = None) -> Vocabulary:
    """Top-``cap`` tokens by corpus frequency (ties: lexicographically smaller first)."""
    if not corpus:
        raise ValueError("empty corpus")
    docs = [tokenize(doc, stop) for doc in corpus]
    counts = Counter()
    dfs = Counter()
    for toks in docs:
        counts.update(toks)
        dfs.update(set(toks))
    ranked = sorted(counts, key=lambda t: (-counts[t], t))[:cap]
    total = sum(counts[t] for t in ranked)
    unigram = np.array([counts[t] / total for t in ranked]) if total else np.zeros(0)
    return Vocabulary(tuple(ranked), {t: i for i, t in enumerate(ranked)},
                      np.array([dfs[t] for t in ranked], dtype=np.float64), unigram, len(docs))


@dataclass(frozen=True)
class TfIdfModel:
    vocabulary: Vocabulary
    idf: np.ndarray
    stop: frozenset | None = None

    @property
    def dim(self) -> int:
        return len(self.vocabulary)

    def to_dict(self) -> dict:
        return {**self.vocabulary.to_dict(), "idf": self.idf.tolist(),
                "stop": None if self.stop is None else sorted(self.stop)}

    @classmethod
    def from_dict(cls, blob: dict) -> "TfIdfModel":
        stop = None if blob.get("stop") is None else frozenset(blob["stop"])
        return cls(Vocabulary.from_dict(blob), np.array(blob["idf"], dtype=np.float64), stop)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TfIdfModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def tfidf_fit(corpus: Sequence[str], cap: int = DEFAULT_VOCAB_CAP,
              stop: Iterable[str] | None = None) -> TfIdfModel:
    stop = None if stop is None else frozenset(stop)
    vocab = fit_vocabulary(corpus, cap, stop)
    idf = np.log((1.0 + vocab.n_docs) / (1.0 + vocab.doc_freq)) + 1.0
    return TfIdfModel(vocab, idf, stop)


def tfidf_transform(model: TfIdfModel, document: str) -> np.ndarray:
    """Raw counts x idf, L2-normalized (zero vector stays zero)."""
    vec = np.zeros(model.dim)
    index = model.vocabulary.index
    for tok in tokenize(document, model.stop):
        i = index.get(tok)
        if i is not None:
            vec[i] += 1.0
    vec *= model.idf
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def tfidf_matrix(model: TfIdfModel, documents: Sequence[str]) -> np.ndarray:
    return np.stack([tfidf_transform(model, d) for d in documents]) if documents \
        else np.zeros((0, model.dim))


class EmbeddingTable:
    """Fixed-width word vectors. Lookups of absent tokens return ``None``."""

    def __init__(self, tokens: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise ValueError("vectors must be (n_tokens, width)")
        self.index = {t: i for i, t in enumerate(tokens)}
        self.vectors = vectors
        self.vectors.setflags(write=False)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.index)

    def __contains__(self, token):
        return token in self.index

    def get(self, token: str) -> np.ndarray | None:
        i = self.index.get(token)
        return None if i is None else self.vectors[i]

    @property
    def tokens(self) -> list[str]:
        return list(self.index)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, i in self.index.items():
                fh.write(tok + " " + " ".join(repr(float(v)) for v in self.vectors[i]) + "\n")


def load_embedding_table(path) -> EmbeddingTable:
    """Read ``token v1 ... vE`` lines (GloVe text format).

    A repeated token keeps its last vector and emits a warning.
    """
    rows: dict[str, np.ndarray] = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            tok, nums = parts[0], parts[1:]
            try:
                vec = np.array([float(x) for x in nums], dtype=np.float64)
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric vector entry") from None
            if width is None:
                width = vec.size
            if vec.size != width or width == 0:
                raise ValueError(f"line {lineno}: width {vec.size}, expected {width}")
            if tok in rows:
                warnings.warn(f"duplicate token {tok!r} at line {lineno}; keeping the last")
                del rows[tok]
            rows[tok] = vec
    if not rows:
        raise ValueError(f"{path}: no embeddings")
    return EmbeddingTable(list(rows), np.stack(list(rows.values())))


def random_embedding_table(tokens: Sequence[str], width: int, seed: int = 0) -> EmbeddingTable:
    """Gaussian stand-in vectors, for synthetic runs without pre-trained embeddings."""
    rng = np.random.default_rng(seed)
    tokens = sorted(set(tokens))
    return EmbeddingTable(tokens, rng.normal(0.0, 1.0 / math.sqrt(width), (len(tokens), width)))


UNWEIGHTED = "unweighted"
WEIGHTED = "weighted"


def embed_sentences(document: str, table: EmbeddingTable, mode: str = UNWEIGHTED,
                    unigram_probs=None, a: float = SIF_A) -> np.ndarray:
    """One row per sentence that has at least one in-table word.

    ``unweighted``: mean of word vectors. ``weighted``: sum of
    ``a / (a + p(w)) * vec(w)`` over in-table words divided by their count.
    ``unigram_probs`` maps token -> p(w) (a :class:`Vocabulary` works);
    unseen tokens get p = 0.
    """
    if mode not in (UNWEIGHTED, WEIGHTED):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == WEIGHTED and unigram_probs is None:
        raise ValueError("weighted mode needs unigram probabilities")
    rows = []
    for sent in split_sentences(document):
        vecs, weights = [], []
        for tok in sent:
            v = table.get(tok)
            if v is None:
                continue
            vecs.append(v)
            if mode == WEIGHTED:
                p = (unigram_probs.probability(tok) if isinstance(unigram_probs, Vocabulary)
                     else float(unigram_probs.get(tok, 0.0)))
                weights.append(a / (a + p))
            else:
                weights.append(1.0)
        if vecs:
            rows.append(np.asarray(weights) @ np.stack(vecs) / len(vecs))
    return np.stack(rows) if rows else np.zeros((0, table.width))


def in_table_tokens(document: str, table: EmbeddingTable) -> list[str]:
    return [t for t in tokenize(document) if t in table]


def tokens_to_matrix(document: str, table: EmbeddingTable, max_len: int) -> np.ndarray:
    """(max_len, E) word-vector matrix, zero-padded; longer documents are truncated."""
    toks = in_table_tokens(document, table)
    if len(toks) > max_len:
        warnings.warn(f"document of {len(toks)} tokens truncated to {max_len}")
        toks = toks[:max_len]
    out = np.zeros((max_len, table.width))
    for i, t in enumerate(toks):
        out[i] = table.get(t)
    return out
