"""Self-contained model checkpoints: parameters plus everything needed to featurize new data."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import text as tx
from .core import ParameterStore
from .features import TextFeaturizer
from .interp import ObservationBatch, reference_grid
from .models import Batch, FusionModel, FusionSpec, TextEncoderSpec
from .series import Dataset, Normalizer, apply_window, normalize

FORMAT = "mmfusion-model-v1"


def _featurizer_to_dict(f: TextFeaturizer) -> dict:
    blob = {"variant": f.variant, "max_len": f.max_len, "min_len": f.min_len}
    if f.tfidf is not None:
        blob["tfidf"] = f.tfidf.to_dict()
    if f.table is not None:
        blob["table"] = {"tokens": f.table.tokens, "vectors": f.table.vectors.tolist()}
    if f.vocabulary is not None:
        blob["vocabulary"] = f.vocabulary.to_dict()
    return blob


def _featurizer_from_dict(blob: dict) -> TextFeaturizer:
    table = None
    if "table" in blob:
        table = tx.EmbeddingTable(blob["table"]["tokens"], np.array(blob["table"]["vectors"]))
    return TextFeaturizer(
        blob["variant"],
        tfidf=tx.TfIdfModel.from_dict(blob["tfidf"]) if "tfidf" in blob else None,
        table=table,
        vocabulary=tx.Vocabulary.from_dict(blob["vocabulary"]) if "vocabulary" in blob else None,
        max_len=blob["max_len"], min_len=blob["min_len"])


class ModelBundle:
    """A trained model with its normalizer, text featurizer and windowing settings."""

    def __init__(self, spec: FusionSpec, params: ParameterStore, hours: float, T: int,
                 normalizer: Normalizer | None, featurizer: TextFeaturizer | None,
                 admission_text: bool = False):
        self.spec = spec
        self.params = params
        self.hours = hours
        self.T = T
        self.normalizer = normalizer
        self.featurizer = featurizer
        self.admission_text = admission_text

    @property
    def model(self) -> FusionModel:
        return FusionModel(self.spec)

    def batch(self, dataset: Dataset) -> Batch:
        windowed = apply_window(dataset, self.hours)
        obs = grid = feats = None
        if self.spec.uses_ts:
            grid = reference_grid(self.hours, self.T)
            obs = ObservationBatch.from_records(normalize(windowed, self.normalizer).records,
                                                windowed.D)
        if self.spec.uses_text:
            text_ds = apply_window(dataset, 0) if self.admission_text else windowed
            feats = self.featurizer.transform([r.document() for r in text_ds.records])
        return Batch(dataset.labels.astype(np.float64), obs=obs, grid=grid, text=feats)

    def predict(self, dataset: Dataset) -> np.ndarray:
        return self.model.predict(self.params, self.batch(dataset))

    def to_dict(self) -> dict:
        spec = asdict(self.spec)
        return {
            "format": FORMAT,
            "spec": spec,
            "hours": self.hours,
            "T": self.T,
            "admission_text": self.admission_text,
            "normalizer": None if self.normalizer is None else {
                "mean": self.normalizer.mean.tolist(), "std": self.normalizer.std.tolist()},
            "featurizer": None if self.featurizer is None
            else _featurizer_to_dict(self.featurizer),
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelBundle":
        if blob.get("format") != FORMAT:
            raise ValueError(f"not a model bundle (format {blob.get('format')!r})")
        spec = dict(blob["spec"])
        if spec.get("text") is not None:
            spec["text"] = TextEncoderSpec(**spec["text"])
        norm = blob["normalizer"]
        return cls(FusionSpec(**spec), ParameterStore.from_dict(blob["params"]),
                   blob["hours"], blob["T"],
                   None if norm is None else Normalizer(np.array(norm["mean"]),
                                                        np.array(norm["std"])),
                   None if blob["featurizer"] is None
                   else _featurizer_from_dict(blob["featurizer"]),
                   blob["admission_text"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))
