"""Synthetic card-present transaction streams with injected fraud episodes.

Genuine behaviour is habit driven: every card has a home country, a small
personal set of merchant categories, an amount regime and a preferred entry
mode.  Frauds arrive in short bursts and deviate from those habits with a
probability controlled by ``separability``.  After the first fraud an
investigator blocks the card with a heavy-tailed delay; the card produces
nothing after that moment.

Transactions are stored column-wise (numpy arrays) rather than as a list of
objects; :meth:`TransactionStream.transaction` materialises a single record.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

SECONDS_PER_HOUR = 3600
SECONDS_PER_DAY = 86400
# 2017-01-24T00:00:00Z; first day of the generated calendar.
EPOCH_START = 1485216000

N_COUNTRIES = 40
N_MCC = 60
HOME_COUNTRY = 0
RISKY_COUNTRIES = (7, 13, 21, 29, 33)
RISKY_MCC = (5, 11, 17, 23, 31, 44)
# chip, contactless, magstripe, manual key entry, fallback
N_ENTRY_MODES = 5
RISKY_ENTRY_MODES = (2, 3)
N_TERMINAL_TYPES = 5
N_CARD_TYPES = 4
N_FILLER_NUMERIC = 16
FILLER_CAT_CARDINALITY = (6, 8, 10, 12, 16, 20)
AMOUNT_CAP = 1e5

NUMERIC = "numeric"
CATEGORICAL = "categorical"


def _build_schema() -> dict[str, str]:
    schema = {"amount": NUMERIC, "hour_of_day": NUMERIC, "day_of_week": NUMERIC}
    for k in range(1, N_FILLER_NUMERIC + 1):
        schema[f"num_{k:02d}"] = NUMERIC
    for name in ("country", "mcc", "terminal_type", "card_type", "entry_mode"):
        schema[name] = CATEGORICAL
    for k in range(1, len(FILLER_CAT_CARDINALITY) + 1):
        schema[f"cat_{k:02d}"] = CATEGORICAL
    return schema


SCHEMA: dict[str, str] = _build_schema()
CARDINALITY: dict[str, int] = {
    "country": N_COUNTRIES,
    "mcc": N_MCC,
    "terminal_type": N_TERMINAL_TYPES,
    "card_type": N_CARD_TYPES,
    "entry_mode": N_ENTRY_MODES,
    **{f"cat_{k + 1:02d}": c for k, c in enumerate(FILLER_CAT_CARDINALITY)},
}
assert len(SCHEMA) == 30

GENUINE = 0
FRAUD = 1

# Fig. 2-style availability needs most bursts to run past four frauds.
DEFAULT_BURST_PMF = (0.12, 0.12, 0.08, 0.05, 0.08, 0.10, 0.11, 0.11, 0.09, 0.08, 0.06)


@dataclass(frozen=True)
class Transaction:
    txn_id: int
    card_id: int
    timestamp: int
    label: int
    features: dict

    @property
    def amount(self) -> float:
        return self.features["amount"]

    @property
    def country(self) -> int:
        return self.features["country"]

    @property
    def mcc(self) -> int:
        return self.features["mcc"]

    @property
    def terminal_type(self) -> int:
        return self.features["terminal_type"]


@dataclass
class FraudEpisode:
    card_id: int
    first_fraud_time: int
    fraud_txn_ids: list[int]
    block_time: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "FraudEpisode":
        return cls(**json.loads(line))


@dataclass
class GeneratorConfig:
    n_cards: int = 20000
    days: int = 60
    # upper bound on the fraction of compromised cards
    fraud_card_rate: float = 0.05
    fraud_txn_rate_target: float = 0.000263
    # genuine inter-arrival: per-card log-normal, parameters from a population prior
    gap_median_hours: float = 40.0
    gap_median_spread: float = 0.6
    gap_sigma_low: float = 0.9
    gap_sigma_high: float = 1.4
    # fraud bursts
    burst_length_pmf: tuple[float, ...] = DEFAULT_BURST_PMF
    burst_delay_median_s: float = 900.0
    burst_delay_sigma: float = 1.0
    # block delay: log-normal fast investigations mixed with a uniform tail
    block_fast_weight: float = 0.25
    block_fast_median_s: float = 6 * 3600.0
    block_fast_sigma: float = 0.9
    block_tail_max_s: float = 10 * 86400.0
    # behaviour
    separability: float = 0.3
    habit_noise: float = 0.06
    travel_card_rate: float = 0.1
    # genuine follow-up purchases shortly after the previous one
    session_rate: float = 0.1
    session_gap_median_s: float = 1200.0
    fraud_amount_factor: float = 4.0
    # share of anomalous frauds using globally risky countries/merchants rather than card-novel ones
    fraud_risky_share: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.n_cards <= 0 or self.days <= 0:
            raise ValueError("n_cards and days must be positive")
        for name in ("fraud_card_rate", "fraud_txn_rate_target", "separability",
                     "habit_noise", "travel_card_rate", "block_fast_weight", "session_rate", "fraud_risky_share"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.fraud_txn_rate_target >= 1.0:
            raise ValueError("fraud_txn_rate_target must be < 1")
        pmf = np.asarray(self.burst_length_pmf, dtype=float)
        if pmf.ndim != 1 or len(pmf) == 0 or (pmf < 0).any() or not math.isclose(pmf.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("burst_length_pmf must be a probability vector over lengths 1..K")
        if min(self.burst_delay_median_s, self.block_fast_median_s, self.block_tail_max_s, self.session_gap_median_s) < 0:
            raise ValueError("delay parameters must be non-negative")
        if self.fraud_amount_factor <= 0:
            raise ValueError("fraud_amount_factor must be positive")
        if self.gap_median_hours <= 0 or self.gap_sigma_low > self.gap_sigma_high:
            raise ValueError("invalid inter-arrival prior")

    @property
    def mean_burst_length(self) -> float:
        pmf = np.asarray(self.burst_length_pmf, dtype=float)
        return float(np.dot(np.arange(1, len(pmf) + 1), pmf))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        d = dict(d)
        if "burst_length_pmf" in d:
            d["burst_length_pmf"] = tuple(float(x) for x in d["burst_length_pmf"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["burst_length_pmf"] = list(d["burst_length_pmf"])
        return d


@dataclass
class TransactionStream:
    txn_id: np.ndarray
    card_id: np.ndarray
    timestamp: np.ndarray
    label: np.ndarray
    features: dict[str, np.ndarray]
    schema: dict[str, str] = field(default_factory=lambda: dict(SCHEMA))

    def __post_init__(self):
        n = len(self.txn_id)
        for name, col in [("card_id", self.card_id), ("timestamp", self.timestamp),
                          ("label", self.label), *self.features.items()]:
            if len(col) != n:
                raise ValueError(f"column {name!r} has length {len(col)}, expected {n}")

    def __len__(self) -> int:
        return len(self.txn_id)

    def transaction(self, i: int) -> Transaction:
        feats = {}
        for name, kind in self.schema.items():
            v = self.features[name][i]
            feats[name] = float(v) if kind == NUMERIC else int(v)
        return Transaction(int(self.txn_id[i]), int(self.card_id[i]),
                           int(self.timestamp[i]), int(self.label[i]), feats)

    @property
    def transactions(self) -> list[Transaction]:
        return [self.transaction(i) for i in range(len(self))]

    def take(self, idx: np.ndarray) -> "TransactionStream":
        return TransactionStream(
            self.txn_id[idx], self.card_id[idx], self.timestamp[idx], self.label[idx],
            {k: v[idx] for k, v in self.features.items()}, dict(self.schema),
        )

    def sorted(self) -> "TransactionStream":
        """Chronological order; ties broken by txn_id so per-card order is stable."""
        return self.take(np.lexsort((self.txn_id, self.timestamp)))

    def card_order(self) -> np.ndarray:
        """Indices grouping transactions by card, chronologically within a card."""
        return np.lexsort((self.txn_id, self.timestamp, self.card_id))

    @staticmethod
    def concat(parts: list["TransactionStream"]) -> "TransactionStream":
        first = parts[0]
        return TransactionStream(
            np.concatenate([p.txn_id for p in parts]),
            np.concatenate([p.card_id for p in parts]),
            np.concatenate([p.timestamp for p in parts]),
            np.concatenate([p.label for p in parts]),
            {k: np.concatenate([p.features[k] for p in parts]) for k in first.schema},
            dict(first.schema),
        )


@dataclass
class CardTimeline:
    """One card's transactions in chronological order."""

    card_id: int
    transactions: TransactionStream

    @property
    def n_c(self) -> int:
        return len(self.transactions)

    def __len__(self) -> int:
        return self.n_c


def card_timelines(stream: TransactionStream) -> list[CardTimeline]:
    order = stream.card_order()
    cards = stream.card_id[order]
    starts = np.flatnonzero(np.append(True, cards[1:] != cards[:-1])) if len(cards) else np.array([], int)
    stops = np.append(starts[1:], len(cards))
    return [CardTimeline(int(cards[a]), stream.take(order[a:b])) for a, b in zip(starts, stops)]


# --------------------------------------------------------------------------
# genuine behaviour


def _zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


_COUNTRY_POP = _zipf_weights(N_COUNTRIES, 1.0)
_MCC_POP = _zipf_weights(N_MCC, 0.9)


def _segment_cumsum(values: np.ndarray, seg_start: np.ndarray) -> np.ndarray:
    """Exclusive cumulative sum restarting at every segment start."""
    c = np.cumsum(values)
    excl = c - values
    return excl - np.repeat(excl[seg_start], np.diff(np.append(seg_start, len(values))))


def _card_times(rng: np.random.Generator, cfg: GeneratorConfig, n_cards: int,
                horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Relative timestamps of all genuine transactions and the owning card index."""
    log_med = math.log(cfg.gap_median_hours * SECONDS_PER_HOUR) + rng.normal(0.0, cfg.gap_median_spread, n_cards)
    sigma = rng.uniform(cfg.gap_sigma_low, cfg.gap_sigma_high, n_cards)
    mean_gap = np.exp(log_med + sigma ** 2 / 2)
    p_sess = cfg.session_rate
    log_sess = math.log(max(cfg.session_gap_median_s, 1.0))
    eff_gap = (1 - p_sess) * mean_gap + p_sess * math.exp(log_sess + 0.5)
    start = rng.uniform(0.0, 1.0, n_cards) * np.minimum(mean_gap, horizon)
    budget = (3 * horizon / eff_gap).astype(np.int64) + 16
    cards = np.repeat(np.arange(n_cards), budget)
    seg = np.concatenate([[0], np.cumsum(budget)[:-1]])
    gaps = np.exp(log_med[cards] + sigma[cards] * rng.standard_normal(len(cards)))
    if p_sess > 0:
        sess = rng.random(len(cards)) < p_sess
        gaps[sess] = np.exp(log_sess + rng.standard_normal(int(sess.sum())))
    gaps = np.maximum(1.0, gaps)
    times = start[cards] + _segment_cumsum(gaps, seg)
    # the budget covers the horizon except for astronomically unlikely draws
    last = seg + budget - 1
    short = np.flatnonzero(times[last] < horizon)
    extra_t, extra_c = [], []
    for c in short:
        t = times[last[c]] + gaps[last[c]]
        while t < horizon:
            extra_t.append(t)
            extra_c.append(c)
            if p_sess > 0 and rng.random() < p_sess:
                g = math.exp(log_sess + rng.standard_normal())
            else:
                g = math.exp(log_med[c] + sigma[c] * rng.standard_normal())
            t += max(1.0, g)
    keep = times < horizon
    times = np.concatenate([times[keep], extra_t])
    cards = np.concatenate([cards[keep], np.asarray(extra_c, dtype=np.int64)])
    return np.floor(times).astype(np.int64), cards


def _per_card_choice(rng: np.random.Generator, probs: np.ndarray, owner: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``owner`` from that card's distribution."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(owner))
    return (u[:, None] > cdf[owner]).sum(axis=1)


def _dirichlet_rows(rng: np.random.Generator, alpha: np.ndarray, n: int) -> np.ndarray:
    g = rng.gamma(np.broadcast_to(alpha, (n, len(alpha))))
    g = np.maximum(g, 1e-300)
    return g / g.sum(axis=1, keepdims=True)


def _genuine_columns(rng: np.random.Generator, cfg: GeneratorConfig, n_cards: int,
                     owner: np.ndarray) -> dict[str, np.ndarray]:
    n = len(owner)
    noise = cfg.habit_noise
    cols: dict[str, np.ndarray] = {}

    home = np.where(rng.random(n_cards) < 0.85, HOME_COUNTRY,
                    rng.choice(N_COUNTRIES, size=n_cards, p=_COUNTRY_POP))
    country = home[owner].astype(np.int64)
    away = rng.random(n) < noise / 2
    country[away] = rng.choice(N_COUNTRIES, size=int(away.sum()), p=_COUNTRY_POP)
    # trips: a short run of consecutive transactions in one foreign country
    counts = np.bincount(owner, minlength=n_cards)
    first_row = np.concatenate([[0], np.cumsum(counts)[:-1]])
    travellers = np.flatnonzero((rng.random(n_cards) < cfg.travel_card_rate) & (counts > 2))
    trip_country = rng.choice(N_COUNTRIES, size=len(travellers), p=_COUNTRY_POP)
    trip_len = 1 + rng.poisson(2.0, size=len(travellers))
    trip_start = (rng.random(len(travellers)) * counts[travellers]).astype(np.int64)
    for c, k0, L, tc in zip(travellers, trip_start, trip_len, trip_country):
        lo = first_row[c] + k0
        hi = min(first_row[c] + counts[c], lo + L)
        country[lo:hi] = tc
    cols["country"] = country

    # personal merchant categories: Gumbel top-k without replacement per card
    size = rng.integers(3, 7, size=n_cards)
    keys = np.log(_MCC_POP)[None, :] + rng.gumbel(size=(n_cards, N_MCC))
    ranked = np.argsort(-keys, axis=1)[:, :6]
    w = _dirichlet_rows(rng, np.full(6, 1.5), n_cards)
    w[np.arange(6)[None, :] >= size[:, None]] = 0.0
    w /= w.sum(axis=1, keepdims=True)
    slot = _per_card_choice(rng, w, owner)
    mcc = ranked[owner, slot]
    odd = rng.random(n) < noise
    mcc[odd] = rng.choice(N_MCC, size=int(odd.sum()), p=_MCC_POP)
    cols["mcc"] = mcc.astype(np.int64)

    log_amount = rng.normal(math.log(40.0), 0.7, size=n_cards)
    amount = np.exp(log_amount[owner] + 0.6 * rng.standard_normal(n))
    big = rng.random(n) < noise
    amount[big] *= rng.lognormal(1.0, 0.5, size=int(big.sum()))
    cols["amount"] = np.minimum(np.round(amount, 2), AMOUNT_CAP)

    term_pref = _dirichlet_rows(rng, np.full(N_TERMINAL_TYPES, 0.7), n_cards)
    cols["terminal_type"] = _per_card_choice(rng, term_pref, owner).astype(np.int64)
    cols["card_type"] = rng.integers(N_CARD_TYPES, size=n_cards)[owner].astype(np.int64)
    entry_pref = _dirichlet_rows(rng, 20 * np.array([0.55, 0.35, 0.04, 0.02, 0.04]), n_cards)
    cols["entry_mode"] = _per_card_choice(rng, entry_pref, owner).astype(np.int64)

    offsets = rng.normal(0.0, 1.0, size=(n_cards, N_FILLER_NUMERIC))
    filler = offsets[owner] + rng.normal(0.0, 1.0, size=(n, N_FILLER_NUMERIC))
    for j in range(N_FILLER_NUMERIC):
        cols[f"num_{j + 1:02d}"] = filler[:, j].copy()
    for j, card in enumerate(FILLER_CAT_CARDINALITY):
        pref = rng.integers(card, size=n_cards)[owner]
        other = rng.random(n) < 0.2
        cols[f"cat_{j + 1:02d}"] = np.where(other, rng.integers(card, size=n), pref).astype(np.int64)
    return cols


def _add_time_features(stream_ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rel = stream_ts - EPOCH_START
    hour = (rel % SECONDS_PER_DAY) / SECONDS_PER_HOUR
    # 2017-01-24 was a Tuesday (Monday = 0)
    dow = ((rel // SECONDS_PER_DAY) + 1) % 7
    return hour.astype(np.float64), dow.astype(np.float64)


def generate_genuine(config: GeneratorConfig) -> TransactionStream:
    """Genuine-only stream, a pure function of the config (seed included)."""
    config.validate()
    horizon = config.days * SECONDS_PER_DAY
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x6E]))
    rel, owner = _card_times(rng, config, config.n_cards, horizon)
    # group rows by card, chronological within card, before drawing behaviour
    grp = np.lexsort((rel, owner))
    rel, owner = rel[grp], owner[grp]
    feats = _genuine_columns(rng, config, config.n_cards, owner)
    ts = rel + EPOCH_START
    n = len(ts)
    # ids follow chronological order
    order = np.lexsort((owner, ts))
    stream = TransactionStream(
        np.arange(n, dtype=np.int64), owner[order].astype(np.int64), ts[order],
        np.zeros(n, dtype=np.int8), {k: v[order] for k, v in feats.items()},
    )
    _refresh_time_features(stream)
    return _enforce_strict_card_order(stream)


def _refresh_time_features(stream: TransactionStream) -> None:
    hour, dow = _add_time_features(stream.timestamp)
    stream.features["hour_of_day"] = hour
    stream.features["day_of_week"] = dow


def _enforce_strict_card_order(stream: TransactionStream) -> TransactionStream:
    """Bump colliding timestamps by one second so every card is strictly increasing."""
    order = stream.card_order()
    card = stream.card_id[order]
    ts = stream.timestamp[order].copy()
    while True:
        clash = np.flatnonzero((card[1:] == card[:-1]) & (ts[1:] <= ts[:-1])) + 1
        if len(clash) == 0:
            break
        ts[clash] = ts[clash - 1] + 1
    out = stream.take(order)
    out.timestamp = ts
    _refresh_time_features(out)
    return out.sorted()


# --------------------------------------------------------------------------
# fraud


def attainable_fraud_rate(config: GeneratorConfig, n_genuine: int) -> tuple[float, float]:
    """Range of fraud transaction rates reachable with the configured card cap."""
    max_frauds = config.fraud_card_rate * config.n_cards * config.mean_burst_length
    return 0.0, max_frauds / (n_genuine + max_frauds)


def _n_episodes(config: GeneratorConfig, n_genuine: int) -> int:
    if config.fraud_card_rate == 0.0 or config.fraud_txn_rate_target == 0.0:
        return 0
    lo, hi = attainable_fraud_rate(config, n_genuine)
    p = config.fraud_txn_rate_target
    if p > hi:
        raise ValueError(
            f"fraud_txn_rate_target={p} unattainable: with fraud_card_rate="
            f"{config.fraud_card_rate} and mean burst length {config.mean_burst_length:.2f} "
            f"the attainable range is [{lo}, {hi:.6g}]"
        )
    frauds = p / (1.0 - p) * n_genuine
    return min(int(round(frauds / config.mean_burst_length)),
               int(config.fraud_card_rate * config.n_cards))


def _fraud_rows(rng: np.random.Generator, cfg: GeneratorConfig, stream: TransactionStream,
                card_rows: np.ndarray, first: int, length: int) -> dict[str, np.ndarray]:
    """Feature columns for one burst on a card whose genuine rows are ``card_rows``."""
    sep = cfg.separability
    n = length
    if cfg.burst_delay_median_s > 0:
        delays = rng.lognormal(math.log(cfg.burst_delay_median_s), cfg.burst_delay_sigma, size=n - 1)
    else:
        delays = np.zeros(n - 1)
    times = first + np.concatenate([[0], np.cumsum(np.round(delays).astype(np.int64))])

    def habit(name: str) -> np.ndarray:
        if len(card_rows):
            return stream.features[name][rng.choice(card_rows, size=n)]
        return stream.features[name][rng.integers(len(stream), size=n)]

    cols: dict[str, np.ndarray] = {"_t": times.astype(np.int64)}
    country = habit("country").copy()
    if rng.random() < sep:
        if rng.random() < cfg.fraud_risky_share:
            country[:] = rng.choice(RISKY_COUNTRIES)
        else:
            # any country the card has not used
            seen = np.unique(stream.features["country"][card_rows]) if len(card_rows) else np.array([HOME_COUNTRY])
            w = _COUNTRY_POP.copy()
            w[seen] = 0.0
            country[:] = rng.choice(N_COUNTRIES, p=w / w.sum())
    cols["country"] = country

    mcc = habit("mcc").copy()
    odd = rng.random(n) < sep
    risky = odd & (rng.random(n) < cfg.fraud_risky_share)
    mcc[risky] = rng.choice(RISKY_MCC, size=int(risky.sum()))
    novel = odd & ~risky
    mcc[novel] = rng.choice(N_MCC, size=int(novel.sum()), p=_MCC_POP)
    cols["mcc"] = mcc

    amount = habit("amount").copy()
    big = rng.random(n) < sep
    # large relative to the card's own spending, not in absolute terms
    amount[big] = np.minimum(np.round(amount[big] * rng.lognormal(math.log(cfg.fraud_amount_factor), 0.4,
                                                                  size=int(big.sum())), 2), AMOUNT_CAP)
    cols["amount"] = amount

    entry = habit("entry_mode").copy()
    odd = rng.random(n) < sep
    entry[odd] = rng.choice(RISKY_ENTRY_MODES, size=int(odd.sum()))
    cols["entry_mode"] = entry

    for name in ("terminal_type", "card_type", *[f"cat_{k:02d}" for k in range(1, len(FILLER_CAT_CARDINALITY) + 1)]):
        cols[name] = habit(name).copy()
    for k in range(1, N_FILLER_NUMERIC + 1):
        name = f"num_{k:02d}"
        v = habit(name) + rng.normal(0.0, 0.3, size=n)
        if k <= 2:
            v = v + sep
        cols[name] = v
    return cols


def inject_fraud_episodes(stream: TransactionStream, config: GeneratorConfig,
                          seed: int | None = None) -> tuple[TransactionStream, list[FraudEpisode]]:
    """Add one fraud burst to each compromised card.

    Compromised cards are drawn among cards present in ``stream``; their count
    is set by ``fraud_txn_rate_target`` and capped by ``fraud_card_rate``.
    Block times are left unset (see :func:`assign_block_delays`).
    """
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF4]))
    n_gen = len(stream)
    n_ep = _n_episodes(config, n_gen)
    if n_ep == 0:
        return stream, []
    cards = np.unique(stream.card_id)
    chosen = np.sort(rng.choice(cards, size=min(n_ep, len(cards)), replace=False))
    pmf = np.asarray(config.burst_length_pmf, dtype=float)
    start = int(stream.timestamp.min()) if len(stream) else EPOCH_START
    horizon_end = EPOCH_START + config.days * SECONDS_PER_DAY

    order = stream.card_order()
    sorted_cards = stream.card_id[order]
    bounds_lo = np.searchsorted(sorted_cards, chosen, side="left")
    bounds_hi = np.searchsorted(sorted_cards, chosen, side="right")

    next_id = int(stream.txn_id.max()) + 1 if len(stream) else 0
    new_cols: dict[str, list[np.ndarray]] = {name: [] for name in SCHEMA if name not in ("hour_of_day", "day_of_week")}
    new_cols["_t"] = []
    new_cards = []
    episodes = []
    for c, lo, hi in zip(chosen, bounds_lo, bounds_hi):
        rows = order[lo:hi]
        length = 1 + int(rng.choice(len(pmf), p=pmf))
        first = int(rng.integers(max(start, EPOCH_START), horizon_end))
        cols = _fraud_rows(rng, config, stream, rows, first, length)
        keep = cols["_t"] < horizon_end
        m = int(keep.sum())
        for name in new_cols:
            new_cols[name].append(cols[name][keep])
        new_cards.append(np.full(m, c, dtype=np.int64))
        ids = list(range(next_id, next_id + m))
        next_id += m
        episodes.append(FraudEpisode(int(c), int(cols["_t"][0]), ids))

    ts = np.concatenate(new_cols.pop("_t"))
    m = len(ts)
    fraud = TransactionStream(
        np.arange(next_id - m, next_id, dtype=np.int64), np.concatenate(new_cards), ts,
        np.ones(m, dtype=np.int8),
        {**{k: np.concatenate(v) for k, v in new_cols.items()},
         "hour_of_day": np.zeros(m), "day_of_week": np.zeros(m)},
    )
    merged = _enforce_strict_card_order(TransactionStream.concat([stream, fraud]))
    # bumping may shift a first fraud by a second
    ts_by_id = dict(zip(merged.txn_id[merged.label == FRAUD].tolist(),
                        merged.timestamp[merged.label == FRAUD].tolist()))
    for ep in episodes:
        ep.first_fraud_time = int(ts_by_id[ep.fraud_txn_ids[0]])
    return merged, episodes


def sample_block_delays(config: GeneratorConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    fast = rng.random(n) < config.block_fast_weight
    out = np.empty(n)
    if config.block_fast_median_s > 0:
        out[fast] = rng.lognormal(math.log(config.block_fast_median_s), config.block_fast_sigma, size=int(fast.sum()))
    else:
        out[fast] = 0.0
    out[~fast] = rng.uniform(0.0, config.block_tail_max_s, size=int((~fast).sum()))
    return np.round(out).astype(np.int64)


def assign_block_delays(episodes: list[FraudEpisode], config: GeneratorConfig,
                        seed: int | None = None) -> list[FraudEpisode]:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1]))
    delays = sample_block_delays(config, len(episodes), rng)
    return [dataclasses.replace(ep, fraud_txn_ids=list(ep.fraud_txn_ids),
                                block_time=int(ep.first_fraud_time + d))
            for ep, d in zip(episodes, delays)]


def apply_blocks(stream: TransactionStream, episodes: list[FraudEpisode]) -> tuple[TransactionStream, list[FraudEpisode]]:
    """Drop every transaction a blocked card would have made after its block time."""
    if not episodes:
        return stream, []
    block = np.full(int(stream.card_id.max()) + 1, np.iinfo(np.int64).max, dtype=np.int64)
    for ep in episodes:
        block[ep.card_id] = ep.block_time
    keep = stream.timestamp <= block[stream.card_id]
    out = stream.take(np.flatnonzero(keep))
    kept_ids = set(out.txn_id[out.label == FRAUD].tolist())
    eps = [dataclasses.replace(ep, fraud_txn_ids=[i for i in ep.fraud_txn_ids if i in kept_ids])
           for ep in episodes]
    return out, eps


def generate(config: GeneratorConfig) -> tuple[TransactionStream, list[FraudEpisode]]:
    """Full pipeline: genuine stream, fraud bursts, block delays, card blocking."""
    genuine = generate_genuine(config)
    stream, episodes = inject_fraud_episodes(genuine, config, config.seed)
    episodes = assign_block_delays(episodes, config, config.seed)
    return apply_blocks(stream, episodes)


def generate_stream(config: GeneratorConfig) -> TransactionStream:
    return generate(config)[0]


# --------------------------------------------------------------------------
# file formats


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(s: str) -> int:
    return int(datetime.strptime(s, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc).timestamp())


def _fmt(v, kind: str) -> str:
    return repr(float(v)) if kind == NUMERIC else str(int(v))


def write_stream(stream: TransactionStream, episodes: list[FraudEpisode], out_dir: str | Path) -> None:
    """``transactions.csv`` (one row per transaction) plus ``episodes.jsonl``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(stream.schema)
    cols = [stream.features[n] for n in names]
    kinds = [stream.schema[n] for n in names]
    with open(out / "transactions.csv", "w", newline="\n") as fh:
        fh.write(",".join(["txn_id", "card_id", "timestamp", "label", *names]) + "\n")
        for i in range(len(stream)):
            row = [str(int(stream.txn_id[i])), str(int(stream.card_id[i])),
                   _iso(stream.timestamp[i]), "fraud" if stream.label[i] else "genuine"]
            row += [_fmt(c[i], k) for c, k in zip(cols, kinds)]
            fh.write(",".join(row) + "\n")
    with open(out / "episodes.jsonl", "w") as fh:
        for ep in episodes:
            fh.write(ep.to_json() + "\n")
    with open(out / "schema.json", "w") as fh:
        json.dump(stream.schema, fh, indent=1)


def read_stream(in_dir: str | Path) -> tuple[TransactionStream, list[FraudEpisode]]:
    src = Path(in_dir)
    schema_path = src / "schema.json"
    schema = json.loads(schema_path.read_text()) if schema_path.exists() else dict(SCHEMA)
    with open(src / "transactions.csv") as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if header[:4] != ["txn_id", "card_id", "timestamp", "label"]:
        raise ValueError(f"unexpected header {header[:4]}")
    cols = list(zip(*rows)) if rows else [[] for _ in header]
    feats = {}
    for j, name in enumerate(header[4:], start=4):
        kind = schema[name]
        feats[name] = np.array(cols[j], dtype=np.float64 if kind == NUMERIC else np.int64)
    stream = TransactionStream(
        np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
        np.array([_parse_iso(s) for s in cols[2]], dtype=np.int64),
        np.array([1 if s == "fraud" else 0 for s in cols[3]], dtype=np.int8),
        feats, schema,
    )
    episodes = []
    ep_path = src / "episodes.jsonl"
    if ep_path.exists():
        episodes = [FraudEpisode.from_json(line) for line in ep_path.read_text().splitlines() if line.strip()]
    return stream, episodes
