"""Objectives, Adam, early stopping and the staged fusion pipeline."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import Graph, ParameterStore, Tensor, backward, ops
from .evaluation import auc
from .features import PreparedSplits
from .models import (EARLY, LATE, TEXT_ONLY, TS_ONLY, Batch, FusionModel, FusionSpec,
                     TextEncoderSpec, bce_loss, encode_text)

log = logging.getLogger(__name__)

THETA = "interp."
OMEGA = "pred."
PHI = "text."


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    delta_r: float = 0.0
    delta_f: float = 0.0
    delta_g: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.delta_r, self.delta_f, self.delta_g) < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("lr, batch_size and max_epochs must be positive")


# --- objective ------------------------------------------------------------------

def l2(store: ParameterStore, prefix: str) -> Tensor:
    terms = [ops.sum(ops.square(store[n])) for n in store.names(prefix)]
    total = Tensor(0.0)
    for t in terms:
        total = ops.add(total, t)
    return total


def composite_loss(model: FusionModel, store: ParameterStore, batch: Batch,
                   config: TrainConfig) -> Tensor:
    """Mean BCE + delta_R * mean interpolation loss + delta_F |theta|^2 + delta_G |omega|^2.

    Text pretraining uses the BCE term alone.
    """
    loss = bce_loss(model.forward(store, batch), batch.labels)
    if model.spec.mode == TEXT_ONLY:
        return loss
    if config.delta_r:
        loss = ops.add(loss, ops.scale(model.interp_loss(store, batch), config.delta_r))
    if config.delta_f:
        loss = ops.add(loss, ops.scale(l2(store, THETA), config.delta_f))
    if config.delta_g:
        loss = ops.add(loss, ops.scale(l2(store, OMEGA), config.delta_g))
    return loss


# --- optimizer --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(store: ParameterStore, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update from the gradients held in ``store``."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in store.items():
        if store.is_frozen(name):
            continue
        g = t.grad
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


# --- fitting ------------------------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation AUC; signals a stop after ``patience`` stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


@dataclass
class TrainedModel:
    model: FusionModel
    params: ParameterStore
    history: list = field(default_factory=list)  # (epoch, train_loss, val_auc)
    best_epoch: int = 0
    best_val_auc: float = float("nan")
    config: TrainConfig | None = None
    cell: dict = field(default_factory=dict)
    test_batch: Batch | None = None

    def predict(self, batch: Batch) -> np.ndarray:
        return self.model.predict(self.params, batch)

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_auc"])
            for epoch, loss, val in self.history:
                w.writerow([epoch, repr(float(loss)), repr(float(val))])


def _check_labels(batch: Batch, what: str):
    if len(np.unique(batch.labels)) < 2:
        raise ValueError(f"{what} split must contain both classes")


def fit(model: FusionModel, train: Batch, val: Batch, config: TrainConfig,
        store: ParameterStore | None = None, grid=None) -> TrainedModel:
    """Mini-batch Adam with early stopping on validation AUC.

    A fresh store is initialised from ``config.seed`` unless ``store`` is
    given, in which case training continues from its current values.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    _check_labels(train, "training")
    _check_labels(val, "validation")
    rng = np.random.default_rng(config.seed)
    if store is None:
        store = ParameterStore()
        model.init_params(store, rng, grid=train.grid if grid is None else grid)
    state = AdamState()
    stopper = EarlyStopping(config.patience)
    snapshot = store.snapshot()
    history = []
    n = len(train)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            store.zero_grad()
            with Graph() as g:
                loss = composite_loss(model, store, train.take(idx), config)
            backward(g, loss)
            adam_step(store, state, config)
            total += loss.item() * len(idx)
        val_auc = auc(model.predict(store, val), val.labels)
        history.append((epoch, total / n, val_auc))
        improved, stop = stopper.update(epoch, val_auc)
        log.debug("epoch %d loss %.4f val_auc %.4f", epoch, total / n, val_auc)
        if improved:
            snapshot = store.snapshot()
        if stop:
            break
    store.restore(snapshot)
    store.zero_grad()
    return TrainedModel(model, store, history, stopper.best_epoch, stopper.best, config)


# --- hyperparameter grid --------------------------------------------------------------

@dataclass
class HyperGrid:
    lr: list = field(default_factory=lambda: [1e-3, 3e-4])
    delta_r: list = field(default_factory=lambda: [0.0, 0.1, 1.0])
    delta_fg: list = field(default_factory=lambda: [0.0, 1e-4, 1e-3])
    units: list = field(default_factory=lambda: [32, 64, 128])

    @classmethod
    def from_dict(cls, blob: dict | None) -> "HyperGrid":
        return cls(**(blob or {}))

    def cells(self, stage: str):
        """Configurations searched for ``stage`` (text / ts / fusion)."""
        if stage == "text":
            for lr, units in itertools.product(self.lr, self.units):
                yield {"lr": lr, "units": units}
        elif stage == "ts":
            for lr, dr, dfg, units in itertools.product(self.lr, self.delta_r, self.delta_fg,
                                                        self.units):
                yield {"lr": lr, "delta_r": dr, "delta_f": dfg, "delta_g": dfg, "units": units}
        else:
            for lr, dr, dfg in itertools.product(self.lr, self.delta_r, self.delta_fg):
                yield {"lr": lr, "delta_r": dr, "delta_f": dfg, "delta_g": dfg}


def _cell_config(base: TrainConfig, cell: dict, offset: int) -> TrainConfig:
    kw = {k: v for k, v in cell.items() if k in TrainConfig.__dataclass_fields__}
    return replace(base, seed=base.seed + offset, **kw)


def select(make_model, train: Batch, val: Batch, cells, base: TrainConfig,
           store_factory=None) -> TrainedModel:
    """Fit every grid cell and keep the best validation AUC (first wins ties)."""
    best = None
    for i, cell in enumerate(cells):
        cfg = _cell_config(base, cell, i)
        model = make_model(cell)
        store = store_factory() if store_factory is not None else None
        trained = fit(model, train, val, cfg, store=store)
        trained.cell = cell
        log.info("cell %s -> val auc %.4f", cell, trained.best_val_auc)
        if best is None or trained.best_val_auc > best.best_val_auc:
            best = trained
    return best


# --- staged pipeline -------------------------------------------------------------------

@dataclass
class PipelineResult:
    text: TrainedModel | None = None
    ts: TrainedModel | None = None
    fusion: TrainedModel | None = None
    phi: ParameterStore | None = None

    @property
    def final(self) -> TrainedModel:
        return self.fusion or self.ts or self.text


def text_encoder_spec(data: PreparedSplits, cell: dict, template: dict | None = None):
    extra = dict(template or {})
    if data.featurizer.variant == "we-cnn":
        extra.setdefault("kernels", cell.get("units", 32))
    else:
        extra.setdefault("hidden", cell.get("units", 64))
    return data.featurizer.encoder_spec(**extra)


def train_text(data: PreparedSplits, grid: HyperGrid, base: TrainConfig,
               encoder_kw=None) -> TrainedModel:
    """Supervised text pretraining: embedding layer wired straight to the label."""
    def make(cell):
        return FusionModel(FusionSpec(TEXT_ONLY, text=text_encoder_spec(data, cell, encoder_kw)))

    return select(make, data.train, data.val, grid.cells("text"), base)


def train_ts(data: PreparedSplits, grid: HyperGrid, base: TrainConfig) -> TrainedModel:
    """Interpolation-prediction network on its own (composite objective)."""
    def make(cell):
        return FusionModel(FusionSpec(TS_ONLY, data.n_channels, hidden=cell["units"]))

    return select(make, data.train, data.val, grid.cells("ts"), base)


def text_embeddings(spec: TextEncoderSpec, phi: ParameterStore, batch: Batch,
                    chunk: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(batch), chunk):
        idx = np.arange(start, min(start + chunk, len(batch)))
        out.append(encode_text(spec, batch.take(idx).text, phi).data)
    return np.concatenate(out) if out else np.zeros((0, spec.embed_dim))


def train_fusion(mode: str, data: PreparedSplits, text: TrainedModel, ts: TrainedModel,
                 grid: HyperGrid, base: TrainConfig, reinit: bool = False,
                 precompute_text: bool = True) -> tuple[TrainedModel, ParameterStore]:
    """Freeze the pretrained text encoder and fine-tune theta, omega on the fused objective.

    The interpolation network and GRU start from ``ts``; the output layer
    (and the early-fusion text projection) are re-initialised because their
    input widths change. ``reinit`` starts theta and the GRU from scratch too.
    """
    if mode not in (EARLY, LATE):
        raise ValueError("fusion mode must be 'early' or 'late'")
    phi = ParameterStore()
    phi.update(text.params, PHI)
    phi.freeze(PHI)
    text_spec = text.model.spec.text
    spec = FusionSpec(mode, data.n_channels, hidden=ts.model.spec.hidden, text=text_spec)
    splits = [data.train, data.val, data.test]
    if precompute_text:
        splits = [replace(b, text_embedding=text_embeddings(text_spec, phi, b)) for b in splits]
    train_b, val_b, test_b = splits

    def make(cell):
        return FusionModel(spec)

    def store_factory_for(offset):
        def factory():
            store = ParameterStore()
            store.update(phi, PHI)
            rng = np.random.default_rng(base.seed + 10_000 + offset)
            model = FusionModel(spec)
            if reinit:
                model.init_params(store, rng, grid=data.grid)
            else:
                store.update(ts.params, THETA)
                store.update(ts.params, "pred.gru.")
                model.init_params(store, rng, grid=data.grid, fresh_head_only=True)
            return store
        return factory

    best = None
    for i, cell in enumerate(grid.cells("fusion")):
        cfg = _cell_config(base, cell, i)
        trained = fit(make(cell), train_b, val_b, cfg, store=store_factory_for(i)())
        trained.cell = cell
        if best is None or trained.best_val_auc > best.best_val_auc:
            best = trained
    best.test_batch = test_b
    return best, phi


def pipeline(data: PreparedSplits, mode: str, grid: HyperGrid | None = None,
             base: TrainConfig | None = None, text: TrainedModel | None = None,
             ts: TrainedModel | None = None, reinit: bool = False,
             precompute_text: bool = True, encoder_kw=None) -> PipelineResult:
    """Run the stages ``mode`` needs, reusing any stage results passed in.

    text-only: stage 1. ts-only: stage 2. early/late: stages 1, 2, then
    fusion with the text encoder frozen at its pretrained values.
    """
    grid = grid or HyperGrid()
    base = base or TrainConfig()
    result = PipelineResult()
    if mode in (TEXT_ONLY, EARLY, LATE):
        result.text = text or train_text(data, grid, base, encoder_kw)
        result.phi = result.text.params
    if mode in (TS_ONLY, EARLY, LATE):
        result.ts = ts or train_ts(data, grid, base)
    if mode in (EARLY, LATE):
        result.fusion, result.phi = train_fusion(mode, data, result.text, result.ts, grid, base,
                                                 reinit=reinit, precompute_text=precompute_text)
    return result


def score_test_split(result: PipelineResult, data: PreparedSplits) -> np.ndarray:
    final = result.final
    batch = data.test if final.test_batch is None else final.test_batch
    return final.predict(batch)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
