"""AUCPR at transaction, card and early-card level; delay/availability curves.

AUCPR is average precision with tied scores grouped into one threshold step:

    AP = sum_k (R_k - R_{k-1}) * P_k

over the distinct score values taken in descending order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .datagen import FraudEpisode, TransactionStream


@dataclass(frozen=True)
class PrecisionRecallCurve:
    recall: np.ndarray
    precision: np.ndarray
    thresholds: np.ndarray
    area: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def precision_recall_curve(scores, labels) -> PrecisionRecallCurve:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("AUCPR is undefined without positive examples")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    seen = np.arange(1, len(s) + 1)
    # last index of each tie group
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp = tp[ends].astype(np.float64)
    precision = tp / seen[ends]
    recall = tp / n_pos
    prev = np.concatenate([[0.0], recall[:-1]])
    area = float(np.sum((recall - prev) * precision))
    return PrecisionRecallCurve(recall, precision, s[ends], area)


def aucpr_transaction(scores, labels) -> float:
    return precision_recall_curve(scores, labels).area


@dataclass(frozen=True)
class CardScore:
    card_id: int
    label: int
    score: float
    txn_id: int


def card_scores(card_ids, scores, labels, timestamps=None, txn_ids=None,
                early: bool = False) -> list[CardScore]:
    """Collapse transaction scores to one score per card.

    Regular: the maximum score on the card.  Early: for a fraud card, the
    score of its chronologically first fraud (ties on time go to the lowest
    txn_id); genuine cards keep their maximum.
    """
    card_ids = np.asarray(card_ids)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n = len(card_ids)
    if not (len(scores) == len(labels) == n):
        raise ValueError("card_ids, scores and labels must have equal length")
    txn_ids = np.arange(n) if txn_ids is None else np.asarray(txn_ids)
    if early and timestamps is None:
        raise ValueError("early card scoring needs timestamps")
    if timestamps is None:
        timestamps = np.zeros(n)
    timestamps = np.asarray(timestamps)

    out = []
    order = np.lexsort((txn_ids, timestamps, card_ids))
    cards = card_ids[order]
    starts = np.flatnonzero(np.append(True, cards[1:] != cards[:-1]))
    stops = np.append(starts[1:], n)
    for a, b in zip(starts, stops):
        rows = order[a:b]
        lab = labels[rows]
        is_fraud = bool(lab.any())
        if early and is_fraud:
            pick = rows[int(np.argmax(lab))]  # rows are already chronological
        else:
            pick = rows[int(np.argmax(scores[rows]))]
        out.append(CardScore(card_ids[pick].item(), int(is_fraud), float(scores[pick]), txn_ids[pick].item()))
    return out


def aucpr_card_regular(card_ids, scores, labels) -> float:
    cs = card_scores(card_ids, scores, labels)
    if not any(c.label for c in cs):
        raise ValueError("card-level AUCPR is undefined without fraud cards")
    return aucpr_transaction([c.score for c in cs], [c.label for c in cs])


def aucpr_card_early(card_ids, scores, labels, timestamps, txn_ids=None) -> float:
    cs = card_scores(card_ids, scores, labels, timestamps, txn_ids, early=True)
    if not any(c.label for c in cs):
        raise ValueError("card-level AUCPR is undefined without fraud cards")
    return aucpr_transaction([c.score for c in cs], [c.label for c in cs])


LEVELS = ("txn", "card", "card-early")


def evaluate_level(level: str, card_ids, scores, labels, timestamps, txn_ids=None) -> float:
    if level == "txn":
        return aucpr_transaction(scores, labels)
    if level == "card":
        return aucpr_card_regular(card_ids, scores, labels)
    if level == "card-early":
        return aucpr_card_early(card_ids, scores, labels, timestamps, txn_ids)
    raise ValueError(f"unknown metric level {level!r}; expected one of {LEVELS}")


def metric_report(level: str, card_ids, scores, labels, timestamps, txn_ids=None) -> str:
    value = evaluate_level(level, card_ids, scores, labels, timestamps, txn_ids)
    return json.dumps({"metric": f"aucpr_{level}", "value": value,
                       "n_cards": int(len(np.unique(card_ids))), "n_txns": int(len(scores))},
                      sort_keys=True)


# --------------------------------------------------------------------------
# delay analyses


@dataclass(frozen=True)
class DelayCurve:
    """Right-continuous empirical CDF: ``at(t)`` is the fraction with delay <= t."""

    delays: np.ndarray
    fractions: np.ndarray

    def at(self, t: float) -> float:
        k = np.searchsorted(self.delays, t, side="right")
        return 0.0 if k == 0 else float(self.fractions[k - 1])

    def to_csv(self) -> str:
        rows = ["x,y"] + [f"{d!r},{f!r}" for d, f in zip(self.delays.tolist(), self.fractions.tolist())]
        return "\n".join(rows) + "\n"


def _cdf(values: np.ndarray, population: int) -> DelayCurve:
    v = np.sort(np.asarray(values, dtype=np.float64))
    uniq, last = np.unique(v, return_counts=True)
    frac = np.cumsum(last) / population
    return DelayCurve(uniq, frac)


def verification_delay_cdf(episodes: list[FraudEpisode]) -> DelayCurve:
    if not episodes:
        raise ValueError("no episodes")
    if any(ep.block_time is None for ep in episodes):
        raise ValueError("every episode needs a block_time")
    d = [ep.block_time - ep.first_fraud_time for ep in episodes]
    return _cdf(np.array(d), len(d))


def future_availability_curves(stream: TransactionStream, episodes: list[FraudEpisode],
                               k_max: int = 4) -> list[DelayCurve]:
    """Curve k: fraction of compromised cards whose k-th transaction after the
    first fraud happened within a given delay of it."""
    if not episodes:
        return [DelayCurve(np.array([]), np.array([])) for _ in range(k_max)]
    order = stream.card_order()
    cards = stream.card_id[order]
    ts = stream.timestamp[order]
    per_k: list[list[int]] = [[] for _ in range(k_max)]
    for ep in episodes:
        lo = np.searchsorted(cards, ep.card_id, side="left")
        hi = np.searchsorted(cards, ep.card_id, side="right")
        t = ts[lo:hi]
        after = t[t > ep.first_fraud_time]
        for k in range(min(k_max, len(after))):
            per_k[k].append(int(after[k] - ep.first_fraud_time))
    return [_cdf(np.array(v), len(episodes)) for v in per_k]
