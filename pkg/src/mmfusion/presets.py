"""The built-in synthetic benchmark and the experiment settings run against it."""
from __future__ import annotations

from .experiment import ExperimentConfig
from .series import SyntheticConfig
from .training import HyperGrid, TrainConfig

BENCHMARK_SEEDS = [0, 1, 2, 3, 4]


def benchmark_data(n_records: int = 2000, seed: int = 7) -> SyntheticConfig:
    """N=2000, D=4, vocab 50; each modality partially informative."""
    return SyntheticConfig(n_records=n_records, n_channels=4, vocab_size=50,
                           ts_signal=0.7, text_signal=0.7, seed=seed)


def benchmark_train() -> TrainConfig:
    return TrainConfig(lr=3e-3, batch_size=64, max_epochs=20, patience=3)


def benchmark_grid() -> HyperGrid:
    # one cell per stage keeps five seeds x four modalities inside the runtime budget
    return HyperGrid(lr=[3e-3], delta_r=[0.1], delta_fg=[1e-4], units=[32])


def fusion_experiment(**overrides) -> ExperimentConfig:
    kw = dict(modalities=["text", "ts", "early", "late"], hours=[48], seeds=BENCHMARK_SEEDS,
              T=24, train=benchmark_train(), grid=benchmark_grid())
    kw.update(overrides)
    return ExperimentConfig(**kw)


def temporal_experiment(**overrides) -> ExperimentConfig:
    return fusion_experiment(**{"modalities": ["ts"], "hours": [6, 48], **overrides})
