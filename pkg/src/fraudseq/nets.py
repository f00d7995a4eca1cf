"""LSTM and Bi-LSTM sequence classifiers in plain numpy.

The forward LSTM reads the window left to right up to the target position,
the backward LSTM reads it right to left down to the target position.  The
two hidden states *at the target* are concatenated, passed through dropout,
a ReLU dense layer and a 2-way softmax.  A plain LSTM is the same model
without the backward direction (its windows have no future part).

Gate layout in the fused weight matrix ``W`` of shape ``(D + H, 4H)``:
input, forget, output, candidate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step
from .sequencing import SequenceDataset, Triplet

PROB_FLOOR = 1e-7


@dataclass
class TrainConfig:
    hidden: int = 32
    head: int = 32
    dropout: float = 0.2
    epochs: int = 8
    lr: float = 2e-3
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.hidden < 1 or self.head < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("hidden, head and batch_size must be positive; epochs non-negative")


@dataclass
class BiLstmModel:
    triplet: Triplet
    input_dim: int
    hidden: int
    head: int
    dropout: float
    bidirectional: bool
    params: dict[str, np.ndarray] = field(default_factory=dict)
    config: TrainConfig | None = None

    @property
    def kind(self) -> str:
        return "bilstm" if self.bidirectional else "lstm"

    @property
    def label(self) -> str:
        return f"{'Bi-LSTM' if self.bidirectional else 'LSTM'} {self.triplet}"

    def predict_proba(self, X: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        """Fraud probability per window (eval mode)."""
        out = [forward(self, X[a:a + batch_size])[0][:, 1] for a in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def copy(self) -> "BiLstmModel":
        return dataclasses.replace(self, params={k: v.copy() for k, v in self.params.items()})

    def save(self, path) -> None:
        meta = {"triplet": str(self.triplet), "input_dim": self.input_dim, "hidden": self.hidden,
                "head": self.head, "dropout": self.dropout, "bidirectional": self.bidirectional,
                "config": dataclasses.asdict(self.config) if self.config else None}
        save_checkpoint(path, self.kind, self.params, meta)

    @classmethod
    def load(cls, path) -> "BiLstmModel":
        kind, tensors, meta = load_checkpoint(path)
        if kind not in ("lstm", "bilstm"):
            raise ValueError(f"{path} holds a {kind!r} model, not an LSTM")
        cfg = TrainConfig(**meta["config"]) if meta.get("config") else None
        return cls(Triplet.parse(meta["triplet"]), meta["input_dim"], meta["hidden"], meta["head"],
                   meta["dropout"], meta["bidirectional"], tensors, cfg)


def init_model(triplet: Triplet, input_dim: int, hidden: int, head: int, dropout: float = 0.0,
               bidirectional: bool | None = None, seed: int = 0) -> BiLstmModel:
    if bidirectional is None:
        bidirectional = triplet.m_future > 0
    if not bidirectional and triplet.m_future > 0:
        raise ValueError(f"a unidirectional LSTM cannot use future context ({triplet})")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x157]))
    r = 1.0 / math.sqrt(hidden)
    p = {"fw.W": rng.uniform(-r, r, (input_dim + hidden, 4 * hidden)),
         "fw.b": rng.uniform(-r, r, 4 * hidden)}
    if bidirectional:
        p["bw.W"] = rng.uniform(-r, r, (input_dim + hidden, 4 * hidden))
        p["bw.b"] = rng.uniform(-r, r, 4 * hidden)
    fan = hidden * (2 if bidirectional else 1)
    s1 = 1.0 / math.sqrt(fan)
    p["head.W1f"] = rng.uniform(-s1, s1, (hidden, head))
    if bidirectional:
        p["head.W1b"] = rng.uniform(-s1, s1, (hidden, head))
    p["head.b1"] = rng.uniform(-s1, s1, head)
    s2 = 1.0 / math.sqrt(head)
    p["head.W2"] = rng.uniform(-s2, s2, (head, 2))
    p["head.b2"] = rng.uniform(-s2, s2, 2)
    return BiLstmModel(triplet, input_dim, hidden, head, dropout, bidirectional, p)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(W: np.ndarray, b: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, list]:
    """Run one LSTM over ``xs`` of shape (B, T, D); return the last hidden state."""
    B, T, _ = xs.shape
    H = W.shape[1] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        xh = np.concatenate([xs[:, t, :], h], axis=1)
        z = xh @ W + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((xh, i, f, o, g, c_prev, tc))
    return h, cache


def lstm_backward(W: np.ndarray, cache: list, dh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate ``dh`` (gradient on the last hidden state) through time."""
    H = W.shape[1] // 4
    D = W.shape[0] - H
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dc = np.zeros_like(dh)
    for xh, i, f, o, g, c_prev, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
        dW += xh.T @ dz
        db += dz.sum(axis=0)
        dh = dz @ W[D:].T
        dc = dc * f
    return dW, db


@dataclass
class ForwardCache:
    X: np.ndarray
    fw: list
    bw: list | None
    h_f: np.ndarray
    h_b: np.ndarray | None
    mask_f: np.ndarray | None
    mask_b: np.ndarray | None
    a1: np.ndarray
    hidden: np.ndarray
    probs: np.ndarray


def _check_input(model: BiLstmModel, X: np.ndarray) -> None:
    if X.ndim != 3:
        raise ValueError(f"input must be (batch, window, features), got shape {X.shape}")
    if X.shape[1] != model.triplet.length:
        raise ValueError(f"window length {X.shape[1]} does not match model window length "
                         f"{model.triplet.length} ({model.triplet})")
    if X.shape[2] != model.input_dim:
        raise ValueError(f"feature dimension {X.shape[2]} does not match model input_dim {model.input_dim}")


def dropout_masks(model: BiLstmModel, batch: int, rng: np.random.Generator):
    if model.dropout == 0.0:
        return None, None
    keep = 1.0 - model.dropout
    mf = (rng.random((batch, model.hidden)) < keep) / keep
    mb = (rng.random((batch, model.hidden)) < keep) / keep if model.bidirectional else None
    return mf, mb


def forward(model: BiLstmModel, X: np.ndarray, train_mode: bool = False,
            rng: np.random.Generator | None = None, masks=None) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities ``(B, 2)`` for the target of each window, plus the backward cache.

    Dropout is applied only with ``train_mode``; ``masks`` overrides the
    random draw (used to replay a recorded mask).
    """
    _check_input(model, X)
    p = model.params
    m = model.triplet.m_past
    h_f, c_f = lstm_forward(p["fw.W"], p["fw.b"], X[:, :m + 1, :])
    h_b = c_b = None
    if model.bidirectional:
        h_b, c_b = lstm_forward(p["bw.W"], p["bw.b"], X[:, m:, :][:, ::-1, :])
    mask_f = mask_b = None
    if train_mode:
        if masks is None:
            masks = dropout_masks(model, len(X), rng if rng is not None else np.random.default_rng())
        mask_f, mask_b = masks
    hf = h_f * mask_f if mask_f is not None else h_f
    a1 = hf @ p["head.W1f"]
    if model.bidirectional:
        hb = h_b * mask_b if mask_b is not None else h_b
        a1 = a1 + hb @ p["head.W1b"]
    a1 = a1 + p["head.b1"]
    hidden = np.maximum(a1, 0.0)
    logits = hidden @ p["head.W2"] + p["head.b2"]
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, ForwardCache(X, c_f, c_b, h_f, h_b, mask_f, mask_b, a1, hidden, probs)


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy with the target-class probability clamped to [1e-7, 1 - 1e-7]."""
    labels = np.asarray(labels, dtype=np.int64)
    py = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(-np.mean(np.log(py)))


def backward(model: BiLstmModel, cache: ForwardCache, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` for the batch held in ``cache``."""
    labels = np.asarray(labels, dtype=np.int64)
    p = model.params
    B = len(labels)
    rows = np.arange(B)
    py = cache.probs[rows, labels]
    # the clamp is flat outside its range
    live = ((py > PROB_FLOOR) & (py < 1.0 - PROB_FLOOR)).astype(np.float64)
    dlogits = cache.probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= (live / B)[:, None]

    g: dict[str, np.ndarray] = {}
    g["head.W2"] = cache.hidden.T @ dlogits
    g["head.b2"] = dlogits.sum(axis=0)
    dhidden = dlogits @ p["head.W2"].T
    da1 = dhidden * (cache.a1 > 0)
    g["head.b1"] = da1.sum(axis=0)
    hf = cache.h_f * cache.mask_f if cache.mask_f is not None else cache.h_f
    g["head.W1f"] = hf.T @ da1
    dh_f = da1 @ p["head.W1f"].T
    if cache.mask_f is not None:
        dh_f = dh_f * cache.mask_f
    g["fw.W"], g["fw.b"] = lstm_backward(p["fw.W"], cache.fw, dh_f)
    if model.bidirectional:
        hb = cache.h_b * cache.mask_b if cache.mask_b is not None else cache.h_b
        g["head.W1b"] = hb.T @ da1
        dh_b = da1 @ p["head.W1b"].T
        if cache.mask_b is not None:
            dh_b = dh_b * cache.mask_b
        g["bw.W"], g["bw.b"] = lstm_backward(p["bw.W"], cache.bw, dh_b)
    return g


def numeric_gradients(model: BiLstmModel, X: np.ndarray, labels: np.ndarray, eps: float = 1e-5,
                      masks=None) -> dict[str, np.ndarray]:
    """Central finite differences of the loss for every parameter entry."""
    out = {}
    for name, arr in model.params.items():
        gnum = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = gnum.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            lp = loss(forward(model, X, masks is not None, masks=masks)[0], labels)
            flat[k] = old - eps
            lm = loss(forward(model, X, masks is not None, masks=masks)[0], labels)
            flat[k] = old
            gflat[k] = (lp - lm) / (2 * eps)
        out[name] = gnum
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradient_check(model: BiLstmModel, X: np.ndarray, labels: np.ndarray, eps: float = 1e-5,
                   masks=None) -> dict[str, float]:
    probs, cache = forward(model, X, masks is not None, masks=masks)
    analytic = backward(model, cache, labels)
    numeric = numeric_gradients(model, X, labels, eps, masks)
    return {k: relative_error(analytic[k], numeric[k]) for k in analytic}


# --------------------------------------------------------------------------
# training


def train(dataset: SequenceDataset, config: TrainConfig, bidirectional: bool | None = None,
          log=None) -> tuple[BiLstmModel, list[float]]:
    """Mini-batch Adam on mean cross-entropy; deterministic for a given seed."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = init_model(dataset.triplet, dataset.feature_dim, config.hidden, config.head,
                       config.dropout, bidirectional, config.seed)
    model.config = config
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A]))
    state = AdamState.zeros_like(model.params)
    history: list[float] = []
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for a in range(0, n, config.batch_size):
            idx = order[a:a + config.batch_size]
            X, y = dataset.X[idx], dataset.label[idx]
            probs, cache = forward(model, X, True, rng)
            batch_loss = loss(probs, y)
            if not math.isfinite(batch_loss):
                raise FloatingPointError(
                    f"loss became {batch_loss} in epoch {epoch}; lower the learning rate (now {config.lr})")
            total += batch_loss * len(idx)
            adam_step(model.params, backward(model, cache, y), state, config.lr)
        history.append(total / n)
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {history[-1]:.5f}")
    return model, history
