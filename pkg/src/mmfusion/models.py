"""Text encoders, the GRU prediction network and the fusion heads.

All models read their weights from a :class:`ParameterStore` by name:
``text.*`` for the text encoder (and its pretraining head), ``interp.*``
for the interpolation network and ``pred.*`` for the prediction network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import interp
from .core import ParameterStore, Tensor, ops
from .interp import ObservationBatch

TFIDF_1NN = "tfidf-1nn"
WE_CNN = "we-cnn"
USE_GRU = "use-gru"
WSE_GRU = "wse-gru"
TEXT_VARIANTS = (TFIDF_1NN, WE_CNN, USE_GRU, WSE_GRU)

TEXT_ONLY = "text-only"
TS_ONLY = "ts-only"
EARLY = "early"
LATE = "late"
MODES = (TEXT_ONLY, TS_ONLY, EARLY, LATE)

EMBED_DIM = 128
PROB_CLAMP = 1e-12


def glorot(rng: np.random.Generator, shape, fan_in=None, fan_out=None) -> np.ndarray:
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def dense(store, prefix, x):
    return ops.add(ops.matmul(x, store[prefix + ".W"]), store[prefix + ".b"])


def init_dense(store, rng, prefix, n_in, n_out):
    store.set(prefix + ".W", glorot(rng, (n_in, n_out)))
    store.set(prefix + ".b", np.zeros(n_out))


# --- GRU -------------------------------------------------------------------

def init_gru(store, rng, prefix, n_in, hidden):
    store.set(prefix + ".W", glorot(rng, (n_in, 3 * hidden)))
    store.set(prefix + ".U", glorot(rng, (hidden, 3 * hidden)))
    store.set(prefix + ".b", np.zeros(3 * hidden))


def gru_run(store: ParameterStore, prefix: str, inputs, mask=None, extra=None) -> Tensor:
    """Final hidden state of a GRU over (B, T, F) inputs, h0 = 0.

    Gate layout in W/U/b columns is [update z | reset r | candidate].
    ``mask`` (B, T) holds the state on padded steps; ``extra`` (B, 3H) is a
    per-sequence term added to the input projection at every step.
    """
    U = store[prefix + ".U"]
    H = U.shape[0]
    B, T = inputs.shape[0], inputs.shape[1]
    if T == 0:
        return Tensor(np.zeros((B, H)))
    xw = ops.add(ops.matmul(inputs, store[prefix + ".W"]), store[prefix + ".b"])  # (B,T,3H)
    if extra is not None:
        xw = ops.add(xw, ops.reshape(extra, (B, 1, 3 * H)))
    return ops.gru_scan(xw, U, mask=mask)


def gru_sequence(inputs, store: ParameterStore, prefix: str = "pred.gru") -> Tensor:
    """Final state for a single (T, F) sequence, shape (H,)."""
    x = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("gru_sequence expects a (T, F) matrix")
    return gru_run(store, prefix, Tensor(x[None]) if not isinstance(inputs, Tensor)
                   else ops.reshape(inputs, (1,) + x.shape))[0]


# --- text encoders -----------------------------------------------------------

class SentenceBatch(NamedTuple):
    seq: np.ndarray   # (B, S, E), right-padded
    mask: np.ndarray  # (B, S)

    @classmethod
    def from_sequences(cls, seqs, width):
        B = len(seqs)
        S = max([s.shape[0] for s in seqs] + [0])
        out = np.zeros((B, S, width))
        mask = np.zeros((B, S))
        for i, s in enumerate(seqs):
            out[i, : s.shape[0]] = s
            mask[i, : s.shape[0]] = 1.0
        return cls(out, mask)

    def take(self, idx):
        m = self.mask[idx]
        S = int(m.sum(1).max()) if m.size else 0
        return SentenceBatch(self.seq[idx][:, :S], m[:, :S])


@dataclass
class TextEncoderSpec:
    variant: str
    input_dim: int              # vocabulary size (tfidf) or word-vector width
    embed_dim: int = EMBED_DIM
    hidden: int = 64            # GRU units for the sentence models
    kernels: int = 32           # conv filters for we-cnn
    width: int = 3              # conv filter width

    def __post_init__(self):
        if self.variant not in TEXT_VARIANTS:
            raise ValueError(f"unknown text variant {self.variant!r}")


def init_text_encoder(spec: TextEncoderSpec, store: ParameterStore, rng) -> None:
    if spec.variant == TFIDF_1NN:
        init_dense(store, rng, "text.enc", spec.input_dim, spec.embed_dim)
    elif spec.variant == WE_CNN:
        K, w, E = spec.kernels, spec.width, spec.input_dim
        store.set("text.conv.K", glorot(rng, (w, E, K), fan_in=w * E, fan_out=w * K))
        store.set("text.conv.b", np.zeros(K))
        init_dense(store, rng, "text.enc", K, spec.embed_dim)
    else:
        init_gru(store, rng, "text.gru", spec.input_dim, spec.hidden)
        init_dense(store, rng, "text.enc", spec.hidden, spec.embed_dim)


def encode_text(spec: TextEncoderSpec, features, store: ParameterStore) -> Tensor:
    """(B, embed_dim) text embeddings (rectified 128-unit layer)."""
    if spec.variant == TFIDF_1NN:
        x = _as_array(features, 2, spec)
        if x.shape[1] != spec.input_dim:
            raise ValueError(f"{spec.variant}: expected {spec.input_dim} features, got {x.shape[1]}")
        hidden = Tensor(x)
    elif spec.variant == WE_CNN:
        x = _as_array(features, 3, spec)
        if x.shape[1] < spec.width:
            raise ValueError(f"{spec.variant}: token matrix shorter than filter width")
        conv = ops.relu(ops.add(ops.conv1d(x, store["text.conv.K"]), store["text.conv.b"]))
        hidden = ops.maxpool_time(conv, axis=1)
    else:
        if not isinstance(features, SentenceBatch):
            raise ValueError(f"{spec.variant}: expected a SentenceBatch")
        hidden = gru_run(store, "text.gru", Tensor(features.seq), mask=features.mask)
    return ops.relu(dense(store, "text.enc", hidden))


def _as_array(features, ndim, spec):
    if isinstance(features, (SentenceBatch, tuple)) or np.ndim(features) != ndim:
        raise ValueError(f"{spec.variant}: feature/variant mismatch")
    return np.asarray(features, dtype=np.float64)


# --- batches -------------------------------------------------------------------

@dataclass
class Batch:
    """Model inputs for a set of records; every field is optional per mode."""

    labels: np.ndarray
    obs: ObservationBatch | None = None
    grid: np.ndarray | None = None
    text: object = None                     # raw text features for the encoder
    text_embedding: np.ndarray | None = None  # precomputed frozen embeddings

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        text = self.text
        if isinstance(text, SentenceBatch):
            text = text.take(idx)
        elif text is not None:
            text = text[idx]
        return replace(
            self,
            labels=self.labels[idx],
            obs=None if self.obs is None else self.obs.take(idx),
            text=text,
            text_embedding=None if self.text_embedding is None else self.text_embedding[idx],
        )


# --- prediction models ---------------------------------------------------------

@dataclass
class FusionSpec:
    mode: str
    n_channels: int = 0
    hidden: int = 64
    text: TextEncoderSpec | None = None
    proj_dim: int = 16
    kappa: float = interp.KAPPA

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode != TS_ONLY and self.text is None:
            raise ValueError(f"mode {self.mode!r} needs a text encoder spec")

    @property
    def uses_ts(self):
        return self.mode != TEXT_ONLY

    @property
    def uses_text(self):
        return self.mode != TS_ONLY

    @property
    def text_dim(self):
        return self.text.embed_dim if self.text is not None else 0


class FusionModel:
    """One model per mode.

    * text-only: ``sigmoid(head(h_phi(v)))`` (text pretraining).
    * ts-only: ``sigmoid(head(GRU(f_theta(s)^T)))``.
    * late: ``sigmoid(head([GRU(f_theta(s)^T), h_phi(v)]))``.
    * early: the projected text embedding is appended to the GRU input at
      every reference step; ``sigmoid(head(GRU(...)))``.
    """

    def __init__(self, spec: FusionSpec):
        self.spec = spec

    # parameters

    def init_params(self, store: ParameterStore, rng, grid=None, fresh_head_only=False):
        """Initialise every parameter this mode needs.

        With ``fresh_head_only`` the interpolation and GRU weights already in
        ``store`` are kept and only the output layer (plus the early-fusion
        text projection) is drawn anew.
        """
        s = self.spec
        if s.mode == TEXT_ONLY:
            init_text_encoder(s.text, store, rng)
            init_dense(store, rng, "text.head", s.text_dim, 1)
            return
        n_in = 3 * s.n_channels
        if not fresh_head_only:
            interp.init_interp_params(store, s.n_channels, grid)
            init_gru(store, rng, "pred.gru", n_in, s.hidden)
        head_in = s.hidden + (s.text_dim if s.mode == LATE else 0)
        init_dense(store, rng, "pred.head", head_in, 1)
        if s.mode == EARLY:
            init_dense(store, rng, "pred.early.proj", s.text_dim, s.proj_dim)
            store.set("pred.early.W_text", glorot(rng, (s.proj_dim, 3 * s.hidden)))

    # forward

    def text_embedding(self, store, batch: Batch):
        if batch.text_embedding is not None:
            return Tensor(batch.text_embedding)
        return encode_text(self.spec.text, batch.text, store)

    def blocks(self, store, batch: Batch) -> Tensor:
        return interp.interpolate(batch.obs, batch.grid, store, kappa=self.spec.kappa)

    def logits(self, store: ParameterStore, batch: Batch) -> Tensor:
        s = self.spec
        if s.mode == TEXT_ONLY:
            return dense(store, "text.head", self.text_embedding(store, batch))[:, 0]
        seq = ops.transpose(self.blocks(store, batch), (0, 2, 1))  # (B, T, 3D)
        extra = None
        if s.mode == EARLY:
            proj = dense(store, "pred.early.proj", self.text_embedding(store, batch))
            extra = ops.matmul(proj, store["pred.early.W_text"])
        h = gru_run(store, "pred.gru", seq, extra=extra)
        if s.mode == LATE:
            h = ops.concat([h, self.text_embedding(store, batch)], axis=1)
        return dense(store, "pred.head", h)[:, 0]

    def forward(self, store: ParameterStore, batch: Batch) -> Tensor:
        """Mortality probabilities, shape (B,)."""
        return ops.sigmoid(self.logits(store, batch))

    def predict(self, store: ParameterStore, batch: Batch, batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(batch), batch_size):
            idx = np.arange(start, min(start + batch_size, len(batch)))
            out.append(self.forward(store, batch.take(idx)).data)
        return np.concatenate(out) if out else np.zeros(0)

    def interp_loss(self, store, batch: Batch) -> Tensor:
        """Mean leave-one-out reconstruction loss over records that have data."""
        per_record, has = interp.reconstruction_losses(batch.obs, store)
        n = int(has.sum())
        if n == 0:
            return Tensor(0.0)
        return ops.sum(per_record) * (1.0 / n)


def bce_loss(p, y) -> Tensor:
    """Mean binary cross-entropy with p clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(y, dtype=np.float64)
    p = ops.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = ops.add(ops.mul(ops.log(p), y), ops.mul(ops.log(ops.sub(1.0, p)), 1.0 - y))
    return -ops.mean(terms)


def forward_late(block, text_embedding, store: ParameterStore) -> Tensor:
    """Probability for one (3D, T) block and one text embedding."""
    h = gru_run(store, "pred.gru", ops.reshape(ops.transpose(block), (1,) + block.shape[::-1]))
    z = ops.concat([h, ops.reshape(text_embedding, (1, -1))], axis=1)
    return ops.sigmoid(dense(store, "pred.head", z))[0, 0]


def forward_early(block, text_embedding, store: ParameterStore) -> Tensor:
    proj = dense(store, "pred.early.proj", ops.reshape(text_embedding, (1, -1)))
    extra = ops.matmul(proj, store["pred.early.W_text"])
    h = gru_run(store, "pred.gru", ops.reshape(ops.transpose(block), (1,) + block.shape[::-1]),
                extra=extra)
    return ops.sigmoid(dense(store, "pred.head", h))[0, 0]


def forward_ts(block, store: ParameterStore) -> Tensor:
    h = gru_run(store, "pred.gru", ops.reshape(ops.transpose(block), (1,) + block.shape[::-1]))
    return ops.sigmoid(dense(store, "pred.head", h))[0, 0]
