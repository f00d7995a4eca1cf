"""Skip-gram with negative sampling over per-card sequences of a categorical feature.

Each card contributes one "sentence": the chronological values its
transactions took for the feature.  Input vectors become the embedding.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .datagen import TransactionStream
from .optim import AdamState, adam_step


@dataclass
class EmbeddingTable:
    feature: str
    dim: int
    vocab: np.ndarray  # sorted category values
    vectors: np.ndarray  # (len(vocab), dim)
    oov: np.ndarray  # (dim,)

    def __post_init__(self):
        self.vocab = np.asarray(self.vocab, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(len(self.vocab), self.dim)
        self.oov = np.asarray(self.oov, dtype=np.float64).reshape(self.dim)

    def lookup(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.int64)
        pos = np.searchsorted(self.vocab, values)
        pos = np.minimum(pos, len(self.vocab) - 1)
        known = self.vocab[pos] == values
        table = np.vstack([self.vectors, self.oov[None, :]])
        return table[np.where(known, pos, len(self.vocab))]

    def __getitem__(self, value: int) -> np.ndarray:
        return self.lookup(np.array([value]))[0]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "vocab": self.vocab.tolist(),
                "vectors": self.vectors.tolist(), "oov": self.oov.tolist()}

    @classmethod
    def from_dict(cls, feature: str, d: dict) -> "EmbeddingTable":
        return cls(feature, int(d["dim"]), np.array(d["vocab"], dtype=np.int64),
                   np.array(d["vectors"], dtype=np.float64).reshape(len(d["vocab"]), int(d["dim"])),
                   np.array(d["oov"], dtype=np.float64))


def default_dim(cardinality: int) -> int:
    return 8 if cardinality >= 20 else 4


def _context_pairs(card_ids: np.ndarray, codes: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """(center, context) index pairs within ``window`` positions on the same card.

    Inputs must be grouped by card and chronological within a card.
    """
    centers, contexts = [], []
    for w in range(1, window + 1):
        same = card_ids[w:] == card_ids[:-w]
        a = codes[:-w][same]
        b = codes[w:][same]
        centers += [a, b]
        contexts += [b, a]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


def train_value_embeddings(stream: TransactionStream, feature: str, dim: int, window: int = 2,
                           negatives: int = 5, epochs: int = 3, seed: int = 0,
                           lr: float = 0.01, batch_size: int = 4096,
                           max_pairs: int | None = 200_000) -> EmbeddingTable:
    if len(stream) == 0:
        raise ValueError("empty training stream")
    order = stream.card_order()
    values = stream.features[feature][order].astype(np.int64)
    vocab, codes, counts = np.unique(values, return_inverse=True, return_counts=True)
    if len(vocab) < 2:
        raise ValueError(f"feature {feature!r} has a vocabulary of {len(vocab)} value(s); nothing to embed")
    V = len(vocab)
    rng = np.random.default_rng(np.random.SeedSequence([seed, V, dim]))
    centers, contexts = _context_pairs(stream.card_id[order], codes, window)
    noise = counts.astype(np.float64) ** 0.75
    noise /= noise.sum()

    params = {
        "in": rng.uniform(-0.5 / dim, 0.5 / dim, size=(V, dim)),
        "out": rng.uniform(-0.5 / dim, 0.5 / dim, size=(V, dim)),
    }
    state = AdamState.zeros_like(params)
    for _ in range(epochs):
        if len(centers) == 0:
            break
        idx = rng.permutation(len(centers))
        if max_pairs is not None:
            idx = idx[:max_pairs]
        for start in range(0, len(idx), batch_size):
            b = idx[start:start + batch_size]
            c, o = centers[b], contexts[b]
            neg = rng.choice(V, size=(len(b), negatives), p=noise)
            vc = params["in"][c]                       # (B, d)
            uo = params["out"][o]                      # (B, d)
            un = params["out"][neg]                    # (B, k, d)
            pos = np.einsum("bd,bd->b", vc, uo)
            negs = np.einsum("bkd,bd->bk", un, vc)
            gp = (_sigmoid(pos) - 1.0) / len(b)        # d loss / d pos
            gn = _sigmoid(negs) / len(b)               # d loss / d negs
            g_in = np.zeros_like(params["in"])
            g_out = np.zeros_like(params["out"])
            np.add.at(g_in, c, gp[:, None] * uo + np.einsum("bk,bkd->bd", gn, un))
            np.add.at(g_out, o, gp[:, None] * vc)
            np.add.at(g_out, neg.ravel(), (gn[:, :, None] * vc[:, None, :]).reshape(-1, dim))
            adam_step(params, {"in": g_in, "out": g_out}, state, lr)
    vectors = params["in"]
    if not np.isfinite(vectors).all():
        raise FloatingPointError(f"embedding training for {feature!r} diverged; lower lr")
    return EmbeddingTable(feature, dim, vocab, vectors, vectors.mean(axis=0))


def save_embeddings(tables: dict[str, EmbeddingTable], path) -> None:
    with open(path, "w") as fh:
        json.dump({name: t.to_dict() for name, t in tables.items()}, fh, sort_keys=True)


def load_embeddings(path) -> dict[str, EmbeddingTable]:
    with open(path) as fh:
        raw = json.load(fh)
    return {name: EmbeddingTable.from_dict(name, d) for name, d in raw.items()}


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("cosine of a zero vector")
        return 0.0
    return float(a @ b / (na * nb))
