"""Turn windowed datasets into model-ready batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import text as tx
from .interp import DEFAULT_T, ObservationBatch, reference_grid
from .models import (TFIDF_1NN, USE_GRU, WE_CNN, WSE_GRU, Batch, SentenceBatch,
                     TextEncoderSpec)
from .series import Dataset, Normalizer, fit_normalizer, normalize


@dataclass
class TextFeaturizer:
    """Text features fitted on training documents only."""

    variant: str
    tfidf: tx.TfIdfModel | None = None
    table: tx.EmbeddingTable | None = None
    vocabulary: tx.Vocabulary | None = None
    max_len: int = 0
    min_len: int = 1

    @classmethod
    def fit(cls, variant, train_docs, table=None, vocab_cap=tx.DEFAULT_VOCAB_CAP,
            min_len=1) -> "TextFeaturizer":
        if variant == TFIDF_1NN:
            return cls(variant, tfidf=tx.tfidf_fit(train_docs, cap=vocab_cap))
        if table is None:
            raise ValueError(f"{variant} needs an embedding table")
        if variant == WE_CNN:
            longest = max((len(tx.in_table_tokens(d, table)) for d in train_docs), default=0)
            return cls(variant, table=table, max_len=max(longest, min_len), min_len=min_len)
        vocab = tx.fit_vocabulary(train_docs, cap=vocab_cap) if variant == WSE_GRU else None
        return cls(variant, table=table, vocabulary=vocab)

    @property
    def input_dim(self) -> int:
        return self.tfidf.dim if self.variant == TFIDF_1NN else self.table.width

    def transform(self, docs):
        if self.variant == TFIDF_1NN:
            return tx.tfidf_matrix(self.tfidf, docs)
        if self.variant == WE_CNN:
            if not docs:
                return np.zeros((0, self.max_len, self.table.width))
            return np.stack([tx.tokens_to_matrix(d, self.table, self.max_len) for d in docs])
        mode = tx.WEIGHTED if self.variant == WSE_GRU else tx.UNWEIGHTED
        seqs = [tx.embed_sentences(d, self.table, mode, self.vocabulary) for d in docs]
        return SentenceBatch.from_sequences(seqs, self.table.width)

    def encoder_spec(self, **kwargs) -> TextEncoderSpec:
        return TextEncoderSpec(self.variant, self.input_dim, **kwargs)


@dataclass
class PreparedSplits:
    train: Batch
    val: Batch
    test: Batch
    featurizer: TextFeaturizer | None
    n_channels: int
    grid: np.ndarray | None
    normalizer: Normalizer | None = None


def prepare_splits(splits: dict[str, Dataset], hours: float, text_variant=TFIDF_1NN,
                   table=None, T: int = DEFAULT_T, use_ts=True, use_text=True,
                   text_splits: dict[str, Dataset] | None = None,
                   vocab_cap=tx.DEFAULT_VOCAB_CAP, cnn_width=3) -> PreparedSplits:
    """Normalize with train statistics and featurize text fitted on train docs.

    ``text_splits`` optionally supplies differently windowed datasets for
    the text side (e.g. admission text only).
    """
    text_splits = text_splits or splits
    featurizer = None
    if use_text:
        docs = {k: [r.document() for r in v.records] for k, v in text_splits.items()}
        featurizer = TextFeaturizer.fit(text_variant, docs["train"], table, vocab_cap,
                                        min_len=cnn_width)
    grid = reference_grid(hours, T) if use_ts else None
    norm = fit_normalizer(splits["train"]) if use_ts else None
    batches = {}
    for key in ("train", "val", "test"):
        ds = splits[key]
        obs = None
        if use_ts:
            obs = ObservationBatch.from_records(normalize(ds, norm).records, ds.D)
        feats = featurizer.transform(docs[key]) if use_text else None
        batches[key] = Batch(ds.labels.astype(np.float64), obs=obs, grid=grid, text=feats)
    return PreparedSplits(batches["train"], batches["val"], batches["test"], featurizer,
                          splits["train"].D, grid, norm)
