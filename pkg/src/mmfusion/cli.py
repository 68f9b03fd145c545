"""Command-line entry point: ``mmfusion synthesize | train | evaluate | experiment``.

Exit codes: 0 success, 1 usage or input error, 2 data-contract violation.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import click

from . import text as tx
from .bundle import ModelBundle
from .evaluation import auc, split_by_id
from .experiment import ADMISSION, MODALITY_MODES, ExperimentConfig, run_experiment
from .features import prepare_splits
from .interp import DEFAULT_T
from .models import MODES, TFIDF_1NN
from .series import (Dataset, RecordFormatError, SyntheticConfig, apply_window,
                     load_records, save_records, synthesize)
from .training import HyperGrid, TrainConfig, pipeline, score_test_split

log = logging.getLogger("mmfusion")


class InputError(Exception):
    """Bad config, flag or missing file (exit 1)."""


class DataContractError(Exception):
    """Data that is well-formed but unusable, e.g. a single-class split (exit 2)."""


@dataclass
class RunConfig:
    data: dict                           # {"path": ...} or {"synthetic": {...}}
    embeddings: dict | None = None       # {"path": ...} or {"random": width, "seed": s}
    modality: str = "late"               # used by ``train``
    modalities: list | None = None       # ``experiment``; None means all four
    hours: list = field(default_factory=lambda: [48])
    seeds: list = field(default_factory=lambda: [0])
    text_variant: str = TFIDF_1NN
    text_window: str = "rolling"
    split_mode: str = "resample"
    fixed_split_seed: int = 0
    T: int = DEFAULT_T
    vocab_cap: int = tx.DEFAULT_VOCAB_CAP
    encoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    reinit_fusion: bool = False
    out: str = "run"

    def __post_init__(self):
        if not isinstance(self.data, dict) or len(set(self.data) & {"path", "synthetic"}) != 1:
            raise ValueError("data must name exactly one source: 'path' or 'synthetic'")
        if self.modality not in MODALITY_MODES and self.modality not in MODES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.hours or not self.seeds:
            raise ValueError("hours and seeds must be non-empty")
        # validate the shared fields against whichever command will use them
        self.experiment_config(self.modalities or [self.modality_key])

    @classmethod
    def from_dict(cls, blob: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if "data" not in blob:
            raise ValueError("config needs a 'data' source")
        return cls(**blob)

    @property
    def mode(self) -> str:
        return MODALITY_MODES.get(self.modality, self.modality)

    @property
    def modality_key(self) -> str:
        return {v: k for k, v in MODALITY_MODES.items()}.get(self.modality, self.modality)

    def experiment_config(self, modalities=None) -> ExperimentConfig:
        modalities = modalities or self.modalities or list(MODALITY_MODES)
        return ExperimentConfig(
            modalities=list(modalities), hours=list(self.hours), seeds=list(self.seeds),
            text_variant=self.text_variant, text_window=self.text_window,
            split_mode=self.split_mode, fixed_split_seed=self.fixed_split_seed, T=self.T,
            vocab_cap=self.vocab_cap, encoder=dict(self.encoder),
            train=TrainConfig(**self.train), grid=HyperGrid.from_dict(self.grid),
            reinit_fusion=self.reinit_fusion)

    def dataset(self) -> Dataset:
        if "path" in self.data:
            return load_records(self.data["path"])
        return synthesize(SyntheticConfig.from_dict(self.data["synthetic"]))

    def embedding_table(self, dataset: Dataset):
        if self.text_variant == TFIDF_1NN or self.embeddings is None:
            return None
        if "path" in self.embeddings:
            return tx.load_embedding_table(self.embeddings["path"])
        vocab = sorted({t for r in dataset.records for t in tx.tokenize(r.document())})
        return tx.random_embedding_table(vocab, int(self.embeddings["random"]),
                                         int(self.embeddings.get("seed", 0)))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _load_run_config(path, seed) -> RunConfig:
    blob = _read_json(path)
    if seed is not None:
        blob["seeds"] = [seed]
    try:
        return RunConfig.from_dict(blob)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from exc


def _load_dataset(cfg: RunConfig) -> Dataset:
    try:
        return cfg.dataset()
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc
    except RecordFormatError as exc:
        raise DataContractError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(f"invalid synthetic config: {exc}") from exc


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-v info, -vv debug).")
def cli(verbose):
    """Multimodal fusion of irregular vitals and clinical text."""
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command("synthesize")
@click.option("--config", "config_path", required=True, help="Synthetic generator JSON.")
@click.option("--out", required=True, help="Event file to write.")
@click.option("--seed", type=int, default=None)
def synthesize_cmd(config_path, out, seed):
    """Write a synthetic event file."""
    blob = _read_json(config_path)
    if "data" in blob:  # a full run config
        blob = blob["data"].get("synthetic", {})
    try:
        cfg = SyntheticConfig.from_dict(blob)
        if seed is not None:
            cfg.seed = seed
        dataset = synthesize(cfg)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid synthetic config: {exc}") from exc
    save_records(dataset, out)
    click.echo(f"wrote {len(dataset)} records to {out}")


@cli.command("train")
@click.option("--config", "config_path", required=True, help="Run config JSON.")
@click.option("--out", default=None, help="Output directory (overrides the config).")
@click.option("--seed", type=int, default=None, help="Split and training seed.")
def train_cmd(config_path, out, seed):
    """Train one modality; writes model.json and history.csv."""
    cfg = _load_run_config(config_path, seed)
    hours = cfg.hours[0]
    if cfg.mode != "text-only" and hours == 0:
        raise InputError("time-series modalities need hours > 0")
    exp = cfg.experiment_config([cfg.modality_key])
    dataset = _load_dataset(cfg)
    table = cfg.embedding_table(dataset)
    split_seed = cfg.fixed_split_seed if cfg.split_mode == "fixed" else cfg.seeds[0]
    assignment = split_by_id(dataset.ids, split_seed)
    windowed = apply_window(dataset, hours)
    splits = {k: windowed.subset(v) for k, v in assignment.as_dict().items()}
    text_splits = None
    if cfg.text_window == ADMISSION:
        at0 = apply_window(dataset, 0)
        text_splits = {k: at0.subset(v) for k, v in assignment.as_dict().items()}
    try:
        data = prepare_splits(splits, hours, cfg.text_variant, table, cfg.T,
                              use_ts=cfg.mode != "text-only", use_text=cfg.mode != "ts-only",
                              text_splits=text_splits, vocab_cap=cfg.vocab_cap,
                              cnn_width=cfg.encoder.get("width", 3))
        base = replace(exp.train, seed=exp.train.seed + cfg.seeds[0])
        result = pipeline(data, cfg.mode, exp.grid, base, reinit=cfg.reinit_fusion,
                          encoder_kw=cfg.encoder)
        test_auc = auc(score_test_split(result, data), data.test.labels)
    except ValueError as exc:
        if "both classes" in str(exc):
            raise DataContractError(str(exc)) from exc
        raise
    final = result.final
    bundle = ModelBundle(final.model.spec, final.params, hours, cfg.T, data.normalizer,
                         data.featurizer, admission_text=cfg.text_window == ADMISSION)
    outdir = Path(out or cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle.save(outdir / "model.json")
    final.write_history(outdir / "history.csv")
    click.echo(f"test_auc={test_auc!r}")
    click.echo(f"wrote {outdir / 'model.json'} and {outdir / 'history.csv'}")


@cli.command("evaluate")
@click.option("--model", "model_path", required=True, help="model.json from `train`.")
@click.option("--data", "data_path", required=True, help="Event file to score.")
def evaluate_cmd(model_path, data_path):
    """Print the AUC of a trained model on an event file as ``auc=<float>``."""
    if not Path(model_path).is_file():
        raise InputError(f"no such model file: {model_path}")
    if not Path(data_path).is_file():
        raise InputError(f"no such data file: {data_path}")
    try:
        bundle = ModelBundle.load(model_path)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read model: {exc}") from exc
    try:
        dataset = load_records(data_path)
    except RecordFormatError as exc:
        raise DataContractError(str(exc)) from exc
    if len(set(dataset.labels.tolist())) < 2:
        raise DataContractError("evaluation data must contain both classes")
    if bundle.spec.uses_ts and dataset.D != bundle.spec.n_channels:
        raise DataContractError(f"model expects {bundle.spec.n_channels} channels, "
                                f"data has {dataset.D}")
    score = auc(bundle.predict(dataset), dataset.labels)
    click.echo(f"auc={score!r}")


@cli.command("experiment")
@click.option("--config", "config_path", required=True, help="Run config JSON.")
@click.option("--out", required=True, help="Directory for results.csv, aggregate.json, plots.")
@click.option("--seed", type=int, default=None, help="Run a single split seed.")
def experiment_cmd(config_path, out, seed):
    """Sweep modalities x hours x seeds and write the report files."""
    cfg = _load_run_config(config_path, seed)
    dataset = _load_dataset(cfg)
    try:
        report = run_experiment(dataset, cfg.experiment_config(), cfg.embedding_table(dataset))
    except ValueError as exc:
        if "both classes" in str(exc):
            raise DataContractError(str(exc)) from exc
        raise
    report.write(out)
    for s in report.aggregate()["summary"]:
        click.echo(f"{s['modality']:>5} {s['hours']:>2}h  mean auc {s['mean']:.4f}  "
                   f"(n={s['n']})")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="mmfusion", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:  # usage errors
        exc.show()
        return 1
    except InputError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataContractError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
