"""Hours-from-admission sweeps over resampled splits, with aggregate statistics."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import text as tx
from .evaluation import auc, confidence_interval, paired_t_test, split_by_id
from .features import prepare_splits
from .interp import DEFAULT_T
from .models import EARLY, LATE, TEXT_ONLY, TS_ONLY, TFIDF_1NN
from .series import WINDOW_HOURS, Dataset, apply_window
from .training import HyperGrid, TrainConfig, pipeline, score_test_split

log = logging.getLogger(__name__)

MODALITY_MODES = {"text": TEXT_ONLY, "ts": TS_ONLY, "early": EARLY, "late": LATE}
ROLLING = "rolling"
ADMISSION = "admission"


def _seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    modalities: list = field(default_factory=lambda: ["text", "ts", "early", "late"])
    hours: list = field(default_factory=lambda: [48])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    text_variant: str = TFIDF_1NN
    text_window: str = ROLLING        # or "admission": text frozen at hour 0
    split_mode: str = "resample"      # or "fixed": one split, seeds vary training only
    fixed_split_seed: int = 0
    T: int = DEFAULT_T
    vocab_cap: int = tx.DEFAULT_VOCAB_CAP
    encoder: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: HyperGrid = field(default_factory=HyperGrid)
    reinit_fusion: bool = False

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.grid, dict):
            self.grid = HyperGrid.from_dict(self.grid)
        bad = [m for m in self.modalities if m not in MODALITY_MODES]
        if bad:
            raise ValueError(f"unknown modalities {bad}")
        bad = [h for h in self.hours if h not in WINDOW_HOURS]
        if bad:
            raise ValueError(f"hours must be drawn from {WINDOW_HOURS}, got {bad}")
        if self.text_window not in (ROLLING, ADMISSION):
            raise ValueError(f"text_window must be {ROLLING!r} or {ADMISSION!r}")
        if self.split_mode not in ("resample", "fixed"):
            raise ValueError("split_mode must be 'resample' or 'fixed'")
        if any(h == 0 for h in self.hours) and set(self.modalities) - {"text"}:
            raise ValueError("time-series modalities need hours > 0")

    @classmethod
    def from_dict(cls, blob: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(blob) - known
        if unknown:
            raise ValueError(f"unknown experiment keys {sorted(unknown)}")
        return cls(**blob)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)  # (modality, hours, seed, test auc)
    validation: list = field(default_factory=list)  # (modality, hours, seed, best val auc)

    def aucs(self, modality, hours) -> list[float]:
        sel = sorted((s, a) for m, h, s, a in self.rows if m == modality and h == hours)
        return [a for _, a in sel]

    def keys(self):
        mods = list(dict.fromkeys(m for m, _, _, _ in self.rows))
        hours = sorted(set(h for _, h, _, _ in self.rows))
        return mods, hours

    def aggregate(self) -> dict:
        mods, hours = self.keys()
        summary = []
        for m in mods:
            for h in hours:
                vals = self.aucs(m, h)
                if not vals:
                    continue
                mean, half = (confidence_interval(vals) if len(vals) >= 2
                              else (vals[0], float("nan")))
                summary.append({"modality": m, "hours": h, "n": len(vals), "mean": mean,
                                "half_width": half, "ci_lo": mean - half, "ci_hi": mean + half})
        tests = []
        if "late" in mods:
            for other in mods:
                if other == "late":
                    continue
                for h in hours:
                    a, b = self.aucs("late", h), self.aucs(other, h)
                    if len(a) >= 2 and len(a) == len(b):
                        r = paired_t_test(a, b)
                        tests.append({"a": "late", "b": other, "hours": h, "t": r.t,
                                      "df": r.df, "p": r.p, "degenerate": r.degenerate,
                                      "mean_diff": float(np.mean(a) - np.mean(b))})
        return {"summary": summary, "t_tests": tests}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["modality", "hours", "seed", "auc"])
            for m, h, s, a in self.rows:
                w.writerow([m, h, s, repr(float(a))])

    def write_aggregate(self, path) -> None:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, list):
                return [clean(v) for v in x]
            return x

        Path(path).write_text(json.dumps(clean(self.aggregate()), indent=2, sort_keys=True))

    def write_plotdata(self, outdir) -> list[Path]:
        paths = []
        for m in self.keys()[0]:
            p = Path(outdir) / f"plotdata_{m}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["hours", "mean", "ci_lo", "ci_hi"])
                for s in self.aggregate()["summary"]:
                    if s["modality"] == m:
                        w.writerow([s["hours"], repr(s["mean"]), repr(s["ci_lo"]),
                                    repr(s["ci_hi"])])
            paths.append(p)
        return paths

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.write_csv(outdir / "results.csv")
        self.write_aggregate(outdir / "aggregate.json")
        self.write_plotdata(outdir)


def _windowed_splits(dataset: Dataset, assignment, hours):
    windowed = apply_window(dataset, hours)
    return {k: windowed.subset(v) for k, v in assignment.as_dict().items()}


def run_unit(dataset: Dataset, config: ExperimentConfig, seed: int, hours: int,
             table=None) -> tuple[list, list]:
    """Every modality for one (split seed, hours) pair; stage results are shared.

    Returns (test rows, validation rows).
    """
    split_seed = config.fixed_split_seed if config.split_mode == "fixed" else seed
    assignment = split_by_id(dataset.ids, split_seed)
    splits = _windowed_splits(dataset, assignment, hours)
    text_splits = (_windowed_splits(dataset, assignment, 0)
                   if config.text_window == ADMISSION else None)
    uses_ts = any(m != "text" for m in config.modalities)
    uses_text = any(m != "ts" for m in config.modalities)
    data = prepare_splits(splits, hours, config.text_variant, table, config.T,
                          use_ts=uses_ts, use_text=uses_text, text_splits=text_splits,
                          vocab_cap=config.vocab_cap,
                          cnn_width=config.encoder.get("width", 3))
    base = replace(config.train, seed=_seed(config.train.seed, seed, hours))
    text_res = ts_res = None
    rows, val_rows = [], []
    for modality in config.modalities:
        mode = MODALITY_MODES[modality]
        result = pipeline(data, mode, config.grid, base, text=text_res, ts=ts_res,
                          reinit=config.reinit_fusion, encoder_kw=config.encoder)
        text_res = text_res or result.text
        ts_res = ts_res or result.ts
        score = auc(score_test_split(result, data), data.test.labels)
        log.info("seed %s hours %s %s: test auc %.4f", seed, hours, modality, score)
        rows.append((modality, hours, seed, score))
        val_rows.append((modality, hours, seed, result.final.best_val_auc))
    return rows, val_rows


def _unit_worker(args):
    return run_unit(*args)


def run_experiment(dataset: Dataset, config: ExperimentConfig, table=None,
                   threads: int | None = None) -> ExperimentReport:
    """Window, split, train and test every (seed, hours, modality) cell."""
    if threads is None:
        threads = int(os.environ.get("FUSION_THREADS", "1") or 1)
    units = [(seed, h) for seed in config.seeds for h in config.hours]
    if threads > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_unit_worker,
                                   [(dataset, config, s, h, table) for s, h in units]))
    else:
        chunks = [run_unit(dataset, config, s, h, table) for s, h in units]
    order = {m: i for i, m in enumerate(config.modalities)}

    def collect(k):
        out = [row for chunk in chunks for row in chunk[k]]
        return sorted(out, key=lambda r: (order[r[0]], r[1], config.seeds.index(r[2])))

    return ExperimentReport(collect(0), collect(1))
