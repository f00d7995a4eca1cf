"""Clipping/standardisation, categorical embeddings and 24h aggregates.

Aggregates (13 per transaction): sum, mean and count of amounts over the
card's earlier transactions inside ``(t - 24h, t)``, unconstrained and
constrained to the current transaction's country, merchant category and
terminal type; plus the seconds since the card's previous transaction,
capped at the window length.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .datagen import (CARDINALITY, CATEGORICAL, NUMERIC, SECONDS_PER_DAY, CardTimeline,
                      Transaction, TransactionStream)
from .embeddings import EmbeddingTable, default_dim, train_value_embeddings

BASE = "base"
BASE_AGG = "base+agg"
FEATURE_SETS = (BASE, BASE_AGG)

DEFAULT_CLIP = {"amount": (0.0, 1000.0)}
AGG_FUNCTIONS = ("sum", "mean", "count")
AGG_CONSTRAINTS = (None, "country", "mcc", "terminal_type")


def normalize_feature_set(name: str) -> str:
    key = name.strip().lower().replace(" ", "")
    if key not in FEATURE_SETS:
        raise ValueError(f"unknown feature set {name!r}; expected one of {FEATURE_SETS}")
    return key


@dataclass(frozen=True)
class AggregateSpec:
    function: str
    constraint: str | None = None
    window: int = SECONDS_PER_DAY

    def __post_init__(self):
        if self.function not in AGG_FUNCTIONS:
            raise ValueError(f"aggregate function must be one of {AGG_FUNCTIONS}")
        if self.window <= 0:
            raise ValueError("aggregate window must be positive")

    @property
    def name(self) -> str:
        return f"{self.function}_amount_24h" + (f"_same_{self.constraint}" if self.constraint else "")


DEFAULT_AGGREGATES = tuple(AggregateSpec(f, c) for c in AGG_CONSTRAINTS for f in AGG_FUNCTIONS)
GAP_NAME = "secs_since_prev"
AGGREGATE_NAMES = [a.name for a in DEFAULT_AGGREGATES] + [GAP_NAME]
N_AGGREGATES = len(AGGREGATE_NAMES)


def clip(x: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    if bounds is None:
        return np.asarray(x, dtype=np.float64)
    return np.clip(np.asarray(x, dtype=np.float64), bounds[0], bounds[1])


# --------------------------------------------------------------------------
# aggregates


def compute_aggregates(timeline: CardTimeline, index: int,
                       specs: tuple[AggregateSpec, ...] = DEFAULT_AGGREGATES) -> np.ndarray:
    """Aggregates for transaction ``index`` of a chronologically sorted timeline."""
    txns = timeline.transactions
    if not 0 <= index < len(txns):
        raise IndexError(f"index {index} outside timeline of length {len(txns)}")
    ts = txns.timestamp
    amount = txns.features["amount"]
    out = np.zeros(len(specs) + 1)
    t = ts[index]
    for s, spec in enumerate(specs):
        sel = (ts[:index] > t - spec.window) & (ts[:index] < t)
        if spec.constraint is not None:
            col = txns.features[spec.constraint]
            sel &= col[:index] == col[index]
        vals = amount[:index][sel]
        if spec.function == "sum":
            out[s] = vals.sum()
        elif spec.function == "count":
            out[s] = len(vals)
        else:
            out[s] = vals.mean() if len(vals) else 0.0
    window = specs[0].window if specs else SECONDS_PER_DAY
    out[-1] = min(float(t - ts[index - 1]), window) if index > 0 else float(window)
    return out


def stream_aggregates(stream: TransactionStream,
                      specs: tuple[AggregateSpec, ...] = DEFAULT_AGGREGATES) -> np.ndarray:
    """Aggregates for every transaction of ``stream``, rows aligned with the stream.

    Walks lags 1, 2, ... over the card-grouped order; a lag stops
    contributing once no transaction finds a same-card predecessor inside
    its window, which is final because times are non-decreasing per card.
    """
    n = len(stream)
    out = np.zeros((n, len(specs) + 1))
    if n == 0:
        return out
    order = stream.card_order()
    card = stream.card_id[order]
    ts = stream.timestamp[order]
    amount = stream.features["amount"][order].astype(np.float64)
    cons = {s.constraint: stream.features[s.constraint][order] for s in specs if s.constraint}
    keys = sorted({(s.constraint, s.window) for s in specs}, key=lambda k: (k[0] or "", k[1]))
    sums = {k: np.zeros(n) for k in keys}
    counts = {k: np.zeros(n) for k in keys}
    for window in sorted({s.window for s in specs}):
        lag = 1
        while lag < n:
            near = (card[lag:] == card[:-lag]) & (ts[:-lag] > ts[lag:] - window)
            if not near.any():
                break
            # same-second predecessors fall outside the open window (t - w, t)
            i = np.flatnonzero(near & (ts[:-lag] < ts[lag:])) + lag
            j = i - lag
            for c, w in keys:
                if w != window:
                    continue
                m = np.ones(len(i), bool) if c is None else cons[c][j] == cons[c][i]
                sums[(c, w)][i[m]] += amount[j[m]]
                counts[(c, w)][i[m]] += 1.0
            lag += 1
    res = np.zeros((n, len(specs) + 1))
    for s, spec in enumerate(specs):
        k = (spec.constraint, spec.window)
        if spec.function == "sum":
            res[:, s] = sums[k]
        elif spec.function == "count":
            res[:, s] = counts[k]
        else:
            cnt = counts[k]
            res[:, s] = np.divide(sums[k], cnt, out=np.zeros(n), where=cnt > 0)
    window = specs[0].window if specs else SECONDS_PER_DAY
    gap = np.full(n, float(window))
    same = card[1:] == card[:-1]
    gap[1:][same] = np.minimum(ts[1:][same] - ts[:-1][same], window)
    res[:, -1] = gap
    out[order] = res
    return out


# --------------------------------------------------------------------------
# standardisation


@dataclass
class FeatureStats:
    numeric: list[str]
    clip: dict[str, tuple[float, float]]
    mean: np.ndarray
    std: np.ndarray
    agg_names: list[str] = field(default_factory=list)
    agg_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    agg_std: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def standardize_numeric(self, stream: TransactionStream) -> np.ndarray:
        cols = [clip(stream.features[name], self.clip.get(name)) for name in self.numeric]
        x = np.stack(cols, axis=1) if cols else np.zeros((len(stream), 0))
        return (x - self.mean) / self.std

    def standardize_aggregates(self, aggs: np.ndarray) -> np.ndarray:
        if not self.agg_names:
            raise ValueError("aggregate statistics were not fitted")
        return (aggs - self.agg_mean) / self.agg_std

    def to_dict(self) -> dict:
        return {
            "numeric": self.numeric,
            "clip": {k: list(v) for k, v in self.clip.items()},
            "mean": self.mean.tolist(), "std": self.std.tolist(),
            "agg_names": self.agg_names,
            "agg_mean": self.agg_mean.tolist(), "agg_std": self.agg_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(list(d["numeric"]), {k: tuple(v) for k, v in d["clip"].items()},
                   np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   list(d.get("agg_names", [])), np.array(d.get("agg_mean", []), dtype=np.float64),
                   np.array(d.get("agg_std", []), dtype=np.float64))


def _mean_std(x: np.ndarray, names: list[str]) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for k, name in enumerate(names):
        if not std[k] > 0:
            warnings.warn(f"feature {name!r} is constant on the training data; using sigma = 1")
            std[k] = 1.0
    return mean, std


def fit_stats(stream: TransactionStream, clip_bounds: dict | None = None,
              aggregates: np.ndarray | None = None) -> FeatureStats:
    """Fit clip-then-standardise statistics on training data only."""
    if len(stream) == 0:
        raise ValueError("cannot fit statistics on an empty stream")
    clip_bounds = dict(DEFAULT_CLIP if clip_bounds is None else clip_bounds)
    numeric = [n for n, k in stream.schema.items() if k == NUMERIC]
    cols = [clip(stream.features[n], clip_bounds.get(n)) for n in numeric]
    x = np.stack(cols, axis=1) if cols else np.zeros((len(stream), 0))
    mean, std = _mean_std(x, numeric)
    stats = FeatureStats(numeric, {k: tuple(v) for k, v in clip_bounds.items() if k in numeric}, mean, std)
    if aggregates is not None:
        stats.agg_names = list(AGGREGATE_NAMES)
        stats.agg_mean, stats.agg_std = _mean_std(np.asarray(aggregates, dtype=np.float64), stats.agg_names)
    return stats


# --------------------------------------------------------------------------
# vectorisation


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[str, ...]


@dataclass
class FeaturePipeline:
    stats: FeatureStats
    embeddings: dict[str, EmbeddingTable]
    categorical: list[str]

    def layout(self, feature_set: str) -> tuple[str, ...]:
        fs = normalize_feature_set(feature_set)
        names = list(self.stats.numeric)
        for f in self.categorical:
            names += [f"{f}[{k}]" for k in range(self.embeddings[f].dim)]
        if fs == BASE_AGG:
            names += list(self.stats.agg_names)
        return tuple(names)

    def dim(self, feature_set: str) -> int:
        return len(self.layout(feature_set))

    def transform(self, stream: TransactionStream, feature_set: str,
                  aggregates: np.ndarray | None = None) -> np.ndarray:
        """Feature matrix for every transaction of ``stream`` (rows aligned)."""
        fs = normalize_feature_set(feature_set)
        parts = [self.stats.standardize_numeric(stream)]
        parts += [self.embeddings[f].lookup(stream.features[f]) for f in self.categorical]
        if fs == BASE_AGG:
            if aggregates is None:
                aggregates = stream_aggregates(stream)
            parts.append(self.stats.standardize_aggregates(aggregates))
        x = np.concatenate(parts, axis=1)
        if not np.isfinite(x).all():
            raise FloatingPointError("non-finite feature values")
        return x

    def vectorize(self, txn: Transaction, feature_set: str,
                  aggregates: np.ndarray | None = None) -> FeatureVector:
        fs = normalize_feature_set(feature_set)
        vals = [(np.array([clip(txn.features[n], self.stats.clip.get(n))
                           for n in self.stats.numeric]) - self.stats.mean) / self.stats.std]
        vals += [self.embeddings[f][txn.features[f]] for f in self.categorical]
        if fs == BASE_AGG:
            if aggregates is None:
                raise ValueError("Base+Agg vectorisation needs the transaction's aggregates")
            vals.append(self.stats.standardize_aggregates(np.asarray(aggregates, dtype=np.float64)))
        return FeatureVector(np.concatenate(vals), self.layout(fs))

    def save(self, stats_path, embeddings_path) -> None:
        with open(stats_path, "w") as fh:
            json.dump({**self.stats.to_dict(), "categorical": self.categorical}, fh, sort_keys=True)
        with open(embeddings_path, "w") as fh:
            json.dump({f: t.to_dict() for f, t in self.embeddings.items()}, fh, sort_keys=True)

    @classmethod
    def load(cls, stats_path, embeddings_path) -> "FeaturePipeline":
        with open(stats_path) as fh:
            d = json.load(fh)
        with open(embeddings_path) as fh:
            e = json.load(fh)
        emb = {f: EmbeddingTable.from_dict(f, t) for f, t in e.items()}
        return cls(FeatureStats.from_dict(d), emb, list(d["categorical"]))


@dataclass
class EmbeddingConfig:
    window: int = 2
    negatives: int = 5
    epochs: int = 3
    max_pairs: int | None = 200_000
    dims: dict[str, int] = field(default_factory=dict)


def fit_pipeline(train: TransactionStream, seed: int = 0, emb: EmbeddingConfig | None = None,
                 clip_bounds: dict | None = None, with_aggregates: bool = True,
                 train_aggregates: np.ndarray | None = None) -> FeaturePipeline:
    """Fit statistics and embeddings on the training stream."""
    emb = emb or EmbeddingConfig()
    aggs = None
    if with_aggregates:
        aggs = stream_aggregates(train) if train_aggregates is None else train_aggregates
    stats = fit_stats(train, clip_bounds, aggs)
    categorical = [n for n, k in train.schema.items() if k == CATEGORICAL]
    tables = {}
    for k, f in enumerate(categorical):
        dim = emb.dims.get(f, default_dim(CARDINALITY.get(f, len(np.unique(train.features[f])))))
        tables[f] = train_value_embeddings(train, f, dim, emb.window, emb.negatives, emb.epochs,
                                           seed=seed * 1000 + k, max_pairs=emb.max_pairs)
    return FeaturePipeline(stats, tables, categorical)
