"""Past/present/future windows over card timelines, account sampling and temporal splits."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .datagen import (EPOCH_START, FRAUD, SECONDS_PER_DAY, CardTimeline, TransactionStream,
                      card_timelines)

__all__ = [
    "Triplet", "SplitSpec", "SequenceSample", "SequenceDataset", "CardTimeline", "card_timelines",
    "extract_windows", "window_index", "make_dataset", "account_sample", "account_sample_cards",
    "temporal_split", "write_samples", "read_samples",
]


@dataclass(frozen=True, order=True)
class Triplet:
    m_past: int
    m_future: int

    def __post_init__(self):
        if self.m_past < 0 or self.m_future < 0:
            raise ValueError("context sizes must be non-negative")

    @property
    def length(self) -> int:
        return self.m_past + 1 + self.m_future

    @property
    def target_index(self) -> int:
        return self.m_past

    @classmethod
    def parse(cls, text: str) -> "Triplet":
        m = re.fullmatch(r"\s*(\d+)-1-(\d+)\s*", text)
        if not m:
            raise ValueError(f"triplet must look like 'P-1-F', got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.m_past}-1-{self.m_future}"


def extract_windows(timeline: CardTimeline | Sequence, l_s: int) -> list[list]:
    """All stride-one windows of length ``l_s``; ``n_c - l_s + 1`` of them, or none."""
    if l_s < 1:
        raise ValueError("l_s must be >= 1")
    items = timeline.transactions.transactions if isinstance(timeline, CardTimeline) else list(timeline)
    return [items[k:k + l_s] for k in range(max(0, len(items) - l_s + 1))]


@dataclass(frozen=True)
class SplitSpec:
    """Half-open ``[start, end)`` timestamp intervals for train, gap and test."""

    train: tuple[int, int]
    gap: tuple[int, int]
    test: tuple[int, int]

    def __post_init__(self):
        for name in ("train", "gap", "test"):
            a, b = getattr(self, name)
            if not a < b:
                raise ValueError(f"{name} interval is empty: [{a}, {b})")
        if not (self.train[1] <= self.gap[0] and self.gap[1] <= self.test[0]):
            raise ValueError("intervals must be ordered train < gap < test and must not overlap")

    @classmethod
    def from_days(cls, train=(1, 40), gap=(41, 47), test=(48, 60)) -> "SplitSpec":
        """Inclusive 1-based day ranges of the generated calendar."""
        def iv(days):
            return (EPOCH_START + (days[0] - 1) * SECONDS_PER_DAY, EPOCH_START + days[1] * SECONDS_PER_DAY)
        return cls(iv(train), iv(gap), iv(test))

    @classmethod
    def parse(cls, text: str) -> "SplitSpec":
        """``"1-40,41-47,48-60"`` (day ranges)."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError(f"split spec needs three day ranges, got {text!r}")
        rng = []
        for p in parts:
            a, _, b = p.partition("-")
            rng.append((int(a), int(b)))
        return cls.from_days(*rng)

    def validation(self, fraction: float = 0.2) -> tuple[tuple[int, int], tuple[int, int]]:
        """(fit, validation) intervals: the final ``fraction`` of the train interval by time."""
        a, b = self.train
        cut = b - int(round((b - a) * fraction))
        return (a, cut), (cut, b)


def temporal_split(stream: TransactionStream, split: SplitSpec) -> tuple[TransactionStream, TransactionStream]:
    ts = stream.timestamp
    train = (ts >= split.train[0]) & (ts < split.train[1])
    test = (ts >= split.test[0]) & (ts < split.test[1])
    return stream.take(np.flatnonzero(train)), stream.take(np.flatnonzero(test))


def window_index(stream: TransactionStream, triplet: Triplet, interval: tuple[int, int] | None = None,
                 min_past: int = 0, min_future: int = 0) -> np.ndarray:
    """Stream row indices of every usable window, shape ``(n, l_s)``.

    A window is usable when its target (column ``m_past``) has at least
    ``max(m_past, min_past)`` predecessors and ``max(m_future, min_future)``
    successors on its card and, if given, a timestamp inside ``interval``.
    Rows are ordered by card, then time.
    """
    order = stream.card_order()
    cards = stream.card_id[order]
    n = len(order)
    if n == 0:
        return np.zeros((0, triplet.length), dtype=np.int64)
    starts = np.flatnonzero(np.append(True, cards[1:] != cards[:-1]))
    sizes = np.diff(np.append(starts, n))
    pos = np.arange(n) - np.repeat(starts, sizes)
    after = np.repeat(sizes, sizes) - 1 - pos
    ok = (pos >= max(triplet.m_past, min_past)) & (after >= max(triplet.m_future, min_future))
    if interval is not None:
        t = stream.timestamp[order]
        ok &= (t >= interval[0]) & (t < interval[1])
    tgt = np.flatnonzero(ok)
    offsets = np.arange(-triplet.m_past, triplet.m_future + 1)
    return order[tgt[:, None] + offsets[None, :]]


@dataclass
class SequenceSample:
    card_id: int
    window: np.ndarray  # (l_s, d)
    label: int
    txn_id: int
    timestamp: int
    triplet: Triplet

    @property
    def past(self) -> np.ndarray:
        return self.window[: self.triplet.m_past]

    @property
    def present(self) -> np.ndarray:
        return self.window[self.triplet.m_past]

    @property
    def future(self) -> np.ndarray:
        return self.window[self.triplet.m_past + 1:]


@dataclass
class SequenceDataset:
    triplet: Triplet
    X: np.ndarray  # (n, l_s, d)
    label: np.ndarray
    card_id: np.ndarray
    txn_id: np.ndarray
    timestamp: np.ndarray
    layout: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.X.ndim != 3 or self.X.shape[1] != self.triplet.length:
            raise ValueError(f"X must be (n, {self.triplet.length}, d), got {self.X.shape}")

    def __len__(self) -> int:
        return len(self.label)

    def __iter__(self) -> Iterator[SequenceSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> SequenceSample:
        return SequenceSample(int(self.card_id[i]), self.X[i], int(self.label[i]), int(self.txn_id[i]),
                              int(self.timestamp[i]), self.triplet)

    def subset(self, mask_or_idx) -> "SequenceDataset":
        idx = np.asarray(mask_or_idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return SequenceDataset(self.triplet, self.X[idx], self.label[idx], self.card_id[idx],
                               self.txn_id[idx], self.timestamp[idx], self.layout)

    def restrict_to(self, txn_ids) -> "SequenceDataset":
        return self.subset(np.isin(self.txn_id, np.asarray(list(txn_ids) if isinstance(txn_ids, set) else txn_ids)))

    def in_interval(self, interval: tuple[int, int]) -> "SequenceDataset":
        return self.subset((self.timestamp >= interval[0]) & (self.timestamp < interval[1]))

    @property
    def feature_dim(self) -> int:
        return self.X.shape[2]


def make_dataset(stream: TransactionStream, triplet: Triplet, features, interval: tuple[int, int] | None = None,
                 *, feature_set: str = "base+agg", min_past: int = 0, min_future: int = 0,
                 aggregates: np.ndarray | None = None) -> SequenceDataset:
    """One sample per usable window whose target lies in ``interval``.

    ``features`` is either a fitted ``FeaturePipeline`` or a precomputed
    feature matrix aligned with the rows of ``stream``.  Context rows may
    fall outside the interval; only the target's label is used.
    """
    from .features import FeaturePipeline

    layout: tuple[str, ...] = ()
    if isinstance(features, FeaturePipeline):
        layout = features.layout(feature_set)
        matrix = features.transform(stream, feature_set, aggregates)
    else:
        matrix = np.asarray(features, dtype=np.float64)
        if matrix.shape[0] != len(stream):
            raise ValueError(f"feature matrix has {matrix.shape[0]} rows for {len(stream)} transactions")
    win = window_index(stream, triplet, interval, min_past, min_future)
    tgt = win[:, triplet.target_index]
    return SequenceDataset(triplet, matrix[win], stream.label[tgt].astype(np.int64),
                           stream.card_id[tgt], stream.txn_id[tgt], stream.timestamp[tgt], layout)


def account_sample_cards(card_ids, fraud_card_ids, keep_ratio_genuine: float, seed: int) -> np.ndarray:
    """Card ids kept: every fraud card, plus each genuine-only card with probability ``keep_ratio_genuine``."""
    if not 0.0 <= keep_ratio_genuine <= 1.0:
        raise ValueError("keep_ratio_genuine must lie in [0, 1]")
    cards = np.unique(np.asarray(card_ids, dtype=np.int64))
    if len(cards) == 0:
        return cards
    fraud = np.isin(cards, np.asarray(list(fraud_card_ids), dtype=np.int64))
    # one uniform per card id so the decision does not depend on which other cards are present
    u = np.random.default_rng(np.random.SeedSequence([seed, 0xAC])).random(int(cards.max()) + 1)
    return cards[fraud | (u[cards] < keep_ratio_genuine)]


def account_sample(timelines: list[CardTimeline], keep_ratio_genuine: float, seed: int) -> list[CardTimeline]:
    ids = [tl.card_id for tl in timelines]
    fraud = [tl.card_id for tl in timelines if (tl.transactions.label == FRAUD).any()]
    kept = set(account_sample_cards(ids, fraud, keep_ratio_genuine, seed).tolist())
    return [tl for tl in timelines if tl.card_id in kept]


def sample_dataset_accounts(ds: SequenceDataset, keep_ratio_genuine: float, seed: int) -> SequenceDataset:
    fraud_cards = np.unique(ds.card_id[ds.label == FRAUD])
    kept = account_sample_cards(ds.card_id, fraud_cards, keep_ratio_genuine, seed)
    return ds.subset(np.isin(ds.card_id, kept))


# --------------------------------------------------------------------------
# JSONL


def write_samples(ds: SequenceDataset, path) -> None:
    """One JSON object per line: card_id, target_txn_id, label, timestamp, triplet, features."""
    with open(path, "w") as fh:
        for i in range(len(ds)):
            fh.write(json.dumps({
                "card_id": int(ds.card_id[i]), "target_txn_id": int(ds.txn_id[i]),
                "label": int(ds.label[i]), "timestamp": int(ds.timestamp[i]),
                "triplet": str(ds.triplet), "features": ds.X[i].tolist(),
            }) + "\n")


def read_samples(path, triplet: Triplet | None = None) -> SequenceDataset:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    if not rows:
        if triplet is None:
            raise ValueError(f"{path} holds no samples and no triplet was given")
        return SequenceDataset(triplet, np.zeros((0, triplet.length, 0)), *(np.zeros(0, np.int64) for _ in range(4)))
    trip = Triplet.parse(rows[0]["triplet"])
    if triplet is not None and trip != triplet:
        raise ValueError(f"samples were built for {trip}, expected {triplet}")
    X = np.array([r["features"] for r in rows], dtype=np.float64)
    return SequenceDataset(trip, X, np.array([r["label"] for r in rows], dtype=np.int64),
                           np.array([r["card_id"] for r in rows], dtype=np.int64),
                           np.array([r["target_txn_id"] for r in rows], dtype=np.int64),
                           np.array([r["timestamp"] for r in rows], dtype=np.int64))
