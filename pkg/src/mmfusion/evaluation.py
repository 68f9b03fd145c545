"""Splits, ROC-AUC and resampling statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple
    validation: tuple
    test: tuple
    seed: int

    def as_dict(self) -> dict[str, tuple]:
        return {"train": self.train, "val": self.validation, "test": self.test}


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, validation, test): 20% test, then 20% of the rest for validation."""
    n_test = round_half_up(0.2 * n)
    n_val = round_half_up(0.2 * (n - n_test))
    return n - n_test - n_val, n_val, n_test


def split_by_id(ids: Sequence[str], seed: int) -> SplitAssignment:
    """Seeded shuffle of unique ids; first 20% test, then 20% of the rest validation."""
    unique = list(dict.fromkeys(ids))
    if len(unique) < 5:
        raise ValueError(f"need at least 5 ids to split, got {len(unique)}")
    rng = np.random.default_rng(seed)
    order = [unique[i] for i in rng.permutation(len(unique))]
    _, n_val, n_test = split_sizes(len(unique))
    return SplitAssignment(tuple(order[n_test + n_val:]), tuple(order[n_test:n_test + n_val]),
                           tuple(order[:n_test]), seed)


def auc(scores, labels) -> float:
    """Area under the ROC curve as a rank statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both classes among the labels")
    ranks = stats.rankdata(scores)  # average ranks, 1-based
    # rank sums are multiples of 1/2, so U is exact in float64
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test on per-split values of two methods."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, 1.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), df, 0.0, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), df)
    return TTestResult(float(t), df, float(p))


def confidence_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """(mean, half-width) of a t-based confidence interval."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("confidence interval needs at least two values")
    if np.all(v == v[0]):
        return float(v[0]), 0.0
    q = stats.t.ppf(0.5 + level / 2.0, v.size - 1)
    return float(v.mean()), float(q * v.std(ddof=1) / math.sqrt(v.size))
