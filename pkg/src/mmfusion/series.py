"""Episode records, event-file I/O, windowing, normalization and synthesis."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

EXACT = "exact"
DATE_ONLY = "date"

# per-hour sampling rates of the 12 standard ICU vitals/labs
TABLE1_RATES = {
    "HR": 0.90, "SpO2": 0.80, "DBP": 0.60, "SBP": 0.59, "RR": 0.48, "UO": 0.20,
    "Temp": 0.19, "TGCS": 0.14, "Glucose": 0.10, "CRR": 0.06, "FiO2": 0.06, "pH": 0.04,
}
WINDOW_HOURS = tuple(range(0, 49, 6))


class RecordFormatError(ValueError):
    """Malformed or inconsistent event file."""


def _frozen_array(x) -> np.ndarray:
    arr = np.array(x, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ChannelSeries:
    """One irregularly sampled channel: strictly increasing times and values."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _frozen_array(self.times)
        v = _frozen_array(self.values)
        if t.shape != v.shape:
            raise ValueError(f"times/values length mismatch: {t.size} vs {v.size}")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0):
            raise ValueError("times must be nonnegative and strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_unsorted(cls, times, values) -> "ChannelSeries":
        t = np.asarray(times, dtype=np.float64)
        order = np.argsort(t, kind="stable")
        return cls(t[order], np.asarray(values, dtype=np.float64)[order])

    @classmethod
    def empty(cls) -> "ChannelSeries":
        return cls(np.zeros(0), np.zeros(0))

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, ChannelSeries):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values)

    def truncate(self, hours: float) -> "ChannelSeries":
        n = int(np.searchsorted(self.times, hours, side="right"))
        return ChannelSeries(self.times[:n], self.values[:n])


@dataclass(frozen=True)
class Note:
    text: str
    timestamp: float
    precision: str = EXACT

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("note timestamp must be >= 0")
        if self.precision not in (EXACT, DATE_ONLY):
            raise ValueError(f"unknown note precision {self.precision!r}")

    @property
    def available_at(self) -> float:
        """Hour from admission at which the note's content may be used.

        Date-only notes count as known at the end of their calendar day.
        """
        if self.precision == EXACT:
            return self.timestamp
        return 24.0 * (math.floor(self.timestamp / 24.0) + 1)


@dataclass(frozen=True)
class EpisodeRecord:
    id: str
    channels: tuple[ChannelSeries, ...]
    notes: tuple[Note, ...]
    admission_text: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "channels", tuple(self.channels))
        notes = sorted(self.notes, key=lambda n: n.timestamp)
        object.__setattr__(self, "notes", tuple(notes))

    @property
    def n_observations(self) -> int:
        return sum(len(c) for c in self.channels)

    def document(self) -> str:
        """Admission text followed by every note, in time order."""
        parts = [self.admission_text] + [n.text for n in self.notes]
        return "\n".join(p for p in parts if p)


@dataclass(frozen=True)
class Dataset:
    records: tuple[EpisodeRecord, ...]
    channel_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        D = len(self.channel_names)
        seen = set()
        for r in self.records:
            if len(r.channels) != D:
                raise ValueError(f"record {r.id!r} has {len(r.channels)} channels, expected {D}")
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    @property
    def D(self) -> int:
        return len(self.channel_names)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def __len__(self):
        return len(self.records)

    def subset(self, ids: Sequence[str]) -> "Dataset":
        by_id = {r.id: r for r in self.records}
        return Dataset(tuple(by_id[i] for i in ids), self.channel_names)


# --- event files ---------------------------------------------------------

def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out, i = [], 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append("\n" if nxt == "n" else nxt)
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def load_records(path) -> Dataset:
    """Parse an event file into a :class:`Dataset`.

    Line kinds (``|``-separated, UTF-8)::

        TS|<id>|<channel>|<hours>|<value>
        NOTE|<id>|<hours>|<exact|date>|<text>
        ADMIT|<id>|<text>
        LABEL|<id>|<0|1>
        CHANNELS|<name>|<name>...        (optional; fixes channel order)

    Blank lines and lines starting with ``#`` are ignored.
    """
    path = Path(path)
    order: list[str] = []
    obs: dict[str, dict[str, dict[float, float]]] = {}
    notes: dict[str, list[Note]] = {}
    admit: dict[str, str] = {}
    labels: dict[str, int] = {}
    channels: list[str] = []
    declared = False

    def touch(rid):
        if rid not in obs:
            order.append(rid)
            obs[rid] = {}
            notes[rid] = []

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            kind, _, rest = line.partition("|")
            try:
                if kind == "TS":
                    rid, chan, hours, value = rest.split("|")
                    t, v = float(hours), float(value)
                    if not (math.isfinite(t) and math.isfinite(v)) or t < 0:
                        raise ValueError("non-finite or negative")
                    touch(rid)
                    if chan not in channels:
                        if declared:
                            raise ValueError(f"undeclared channel {chan!r}")
                        channels.append(chan)
                    series = obs[rid].setdefault(chan, {})
                    if t in series:
                        raise RecordFormatError(
                            f"line {lineno}: duplicate observation ({rid}, {chan}, {t})")
                    series[t] = v
                elif kind == "NOTE":
                    rid, hours, prec, text = rest.split("|", 3)
                    touch(rid)
                    notes[rid].append(Note(_unescape(text), float(hours), prec))
                elif kind == "ADMIT":
                    rid, text = rest.split("|", 1)
                    touch(rid)
                    if rid in admit:
                        raise ValueError("duplicate ADMIT")
                    admit[rid] = _unescape(text)
                elif kind == "LABEL":
                    rid, lab = rest.split("|")
                    touch(rid)
                    if rid in labels:
                        raise ValueError("duplicate LABEL")
                    if lab not in ("0", "1"):
                        raise ValueError(f"label {lab!r}")
                    labels[rid] = int(lab)
                elif kind == "CHANNELS":
                    if channels:
                        raise ValueError("CHANNELS must precede TS lines")
                    channels = rest.split("|")
                    declared = True
                else:
                    raise ValueError(f"unknown line kind {kind!r}")
            except RecordFormatError:
                raise
            except ValueError as err:
                raise RecordFormatError(f"line {lineno}: {err}") from None
    if not order:
        raise RecordFormatError("no records")
    missing = [rid for rid in order if rid not in labels]
    if missing:
        raise RecordFormatError(f"no LABEL for id(s) {missing[:5]}")
    records = []
    for rid in order:
        chans = []
        for name in channels:
            pts = obs[rid].get(name, {})
            chans.append(ChannelSeries.from_unsorted(list(pts), list(pts.values())))
        records.append(EpisodeRecord(rid, tuple(chans), tuple(notes[rid]),
                                     admit.get(rid, ""), labels[rid]))
    return Dataset(tuple(records), tuple(channels))


def save_records(dataset: Dataset, path) -> None:
    lines = ["CHANNELS|" + "|".join(dataset.channel_names)]
    for r in dataset.records:
        lines.append(f"ADMIT|{r.id}|{_escape(r.admission_text)}")
        for name, ch in zip(dataset.channel_names, r.channels):
            for t, v in zip(ch.times, ch.values):
                lines.append(f"TS|{r.id}|{name}|{float(t)!r}|{float(v)!r}")
        for n in r.notes:
            lines.append(f"NOTE|{r.id}|{float(n.timestamp)!r}|{n.precision}|{_escape(n.text)}")
        lines.append(f"LABEL|{r.id}|{r.label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- windowing and normalization ------------------------------------------

def apply_window(dataset: Dataset, hours: float) -> Dataset:
    """Keep only what is known ``hours`` after admission.

    Observations with time <= hours survive; a note survives once it is
    available (see :attr:`Note.available_at`). Admission text always stays.
    """
    if hours < 0:
        raise ValueError("window hours must be >= 0")
    out = []
    for r in dataset.records:
        chans = tuple(c.truncate(hours) for c in r.channels)
        notes = tuple(n for n in r.notes if n.available_at <= hours)
        out.append(replace(r, channels=chans, notes=notes))
    return Dataset(tuple(out), dataset.channel_names)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray


def fit_normalizer(train: Dataset, std_floor: float = 1e-6) -> Normalizer:
    D = train.D
    mean = np.zeros(D)
    std = np.ones(D)
    for d in range(D):
        vals = np.concatenate([r.channels[d].values for r in train.records]) if len(train) else []
        if len(vals):
            mean[d] = vals.mean()
            std[d] = max(vals.std(), std_floor)
    return Normalizer(mean, std)


def normalize(dataset: Dataset, norm: Normalizer) -> Dataset:
    out = []
    for r in dataset.records:
        chans = tuple(
            ChannelSeries(c.times, (c.values - norm.mean[d]) / norm.std[d])
            for d, c in enumerate(r.channels)
        )
        out.append(replace(r, channels=chans))
    return Dataset(tuple(out), dataset.channel_names)


# --- synthetic generator --------------------------------------------------

STOP_FILLER = ("the", "and", "of", "with", "no", "was", "is", "on")


@dataclass
class SyntheticConfig:
    """Generator settings.

    ``ts_signal`` scales the label-dependent drift that accrues linearly over
    the horizon; ``text_signal`` shifts the share of risk vs. protective
    tokens. ``*_noise`` terms are per-record nuisance that keep each
    modality only partially predictive.
    """

    n_records: int = 200
    n_channels: int = 4
    horizon: float = 48.0
    rates: list[float] | None = None
    channel_names: list[str] | None = None
    vocab_size: int = 50
    prevalence: float = 0.3
    ts_signal: float = 1.0
    ts_slope_noise: float = 1.0
    ts_noise: float = 0.5
    text_signal: float = 1.0
    text_noise: float = 1.0
    informative_share: float = 0.4
    admission_tokens: int = 12
    note_rate: float = 0.15
    note_tokens: int = 8
    date_only_share: float = 0.2
    sentence_length: int = 5
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rates is None:
            self.rates = list(TABLE1_RATES.values())[: self.n_channels]
        if self.channel_names is None:
            names = list(TABLE1_RATES)
            self.channel_names = [names[i] if i < len(names) else f"ch{i}"
                                  for i in range(self.n_channels)]
        self.validate()

    def validate(self):
        if self.n_records <= 0:
            raise ValueError("n_records must be positive")
        if not self.rates:
            raise ValueError("rates must be non-empty")
        if len(self.rates) != self.n_channels or len(self.channel_names) != self.n_channels:
            raise ValueError("rates/channel_names must have n_channels entries")
        if any(r < 0 for r in self.rates):
            raise ValueError("rates must be >= 0")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be >= 4")
        if not 0 < self.prevalence < 1:
            raise ValueError("prevalence must lie in (0, 1)")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @classmethod
    def from_dict(cls, blob: dict) -> "SyntheticConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        kwargs = {k: v for k, v in blob.items() if k in known}
        extra = {k: v for k, v in blob.items() if k not in known}
        if extra:
            warnings.warn(f"ignoring unknown synthetic config keys {sorted(extra)}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "SyntheticConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthetic_vocabulary(size: int) -> list[str]:
    return [f"term{i:03d}" for i in range(size)]


def poisson_times(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    """Event times of a homogeneous Poisson process on [0, horizon]."""
    n = rng.poisson(rate * horizon)
    return np.unique(rng.uniform(0.0, horizon, size=n))


def synthesize(config: SyntheticConfig, seed: int | None = None) -> Dataset:
    """Draw a labelled multimodal dataset.

    Each record's time series drift away from a channel baseline at a
    record-level slope whose mean depends on the label, so the signal
    accrues over the horizon. Its texts over-sample "risk" or "protective"
    tokens with a record-level propensity that also depends on the label.
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    D = config.n_channels
    vocab = synthetic_vocabulary(config.vocab_size)
    n_inf = max(1, config.vocab_size // 5)
    risk, protective, neutral = vocab[:n_inf], vocab[n_inf:2 * n_inf], vocab[2 * n_inf:]
    baselines = rng.normal(0.0, 1.0, size=D) * 5 + 50
    scales = rng.uniform(2.0, 10.0, size=D)
    directions = rng.choice([-1.0, 1.0], size=D)

    def words(n, lean):
        out = []
        for _ in range(n):
            u = rng.uniform()
            if u < config.informative_share:
                pool = risk if rng.uniform() < lean else protective
            elif u < config.informative_share + 0.1:
                pool = STOP_FILLER
            else:
                pool = neutral
            out.append(pool[rng.integers(len(pool))])
        return out

    def to_text(tokens):
        k = max(1, config.sentence_length)
        sents = [" ".join(tokens[i:i + k]) for i in range(0, len(tokens), k)]
        return ". ".join(s.capitalize() for s in sents) + ("." if sents else "")

    records = []
    width = len(str(config.n_records))
    for n in range(config.n_records):
        y = int(rng.uniform() < config.prevalence)
        sign = 2.0 * y - 1.0
        slope = config.ts_signal * sign + rng.normal(0.0, config.ts_slope_noise)
        offset = rng.normal(0.0, 0.3, size=D)
        chans = []
        for d in range(D):
            t = poisson_times(rng, config.rates[d], config.horizon)
            drift = directions[d] * slope * t / config.horizon
            x = baselines[d] + scales[d] * (offset[d] + drift
                                            + rng.normal(0.0, config.ts_noise, size=t.size))
            chans.append(ChannelSeries(t, x))
        lean = 1.0 / (1.0 + math.exp(-(config.text_signal * sign
                                        + rng.normal(0.0, config.text_noise))))
        admission = to_text(words(config.admission_tokens, lean))
        notes = []
        for ts in poisson_times(rng, config.note_rate, config.horizon):
            prec = DATE_ONLY if rng.uniform() < config.date_only_share else EXACT
            stamp = 24.0 * math.floor(ts / 24.0) if prec == DATE_ONLY else float(ts)
            notes.append(Note(to_text(words(config.note_tokens, lean)), stamp, prec))
        records.append(EpisodeRecord(f"adm{n:0{width}d}", tuple(chans), tuple(notes),
                                     admission, y))
    return Dataset(tuple(records), tuple(config.channel_names))
