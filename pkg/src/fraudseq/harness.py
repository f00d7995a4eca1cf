"""Experiment specs, presets, random search, multi-seed runs and reporting."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import baselines as bl
from .datagen import GeneratorConfig, TransactionStream, generate, read_stream
from .features import BASE, BASE_AGG, FEATURE_SETS, fit_pipeline, normalize_feature_set, stream_aggregates
from .metrics import LEVELS, aucpr_transaction, evaluate_level
from .nets import TrainConfig, train
from .sequencing import SequenceDataset, SplitSpec, Triplet, make_dataset, sample_dataset_accounts

MODEL_KINDS = ("logit", "dt", "rf", "lstm", "bilstm")
_KIND_LABEL = {"logit": "Logit", "dt": "DT", "rf": "RF", "lstm": "LSTM", "bilstm": "Bi-LSTM"}
_LABEL_KIND = {v.lower(): k for k, v in _KIND_LABEL.items()}

# (Bi-)LSTM search grid; "lstm_layers" is read as the recurrent hidden size
FULL_LSTM_GRID = {
    "hidden": [20, 150, 300],
    "head": [20, 150, 300],
    "dropout": [0.2, 0.8],
    "epochs": [2, 4, 8],
    "lr": [1e-3, 1e-4, 5e-4, 5e-5],
    "batch_size": [1024, 2048, 4096, 8192],
}
FULL_RF_GRID = {
    "bootstrap": [True, False],
    "max_depth": [4, 10, 20, None],
    "min_samples_leaf": [2, 10, 100],
    "n_estimators": [10, 20, 100],
}
FULL_DT_GRID = {
    "max_depth": [4, 10, 20, None],
    "max_features": [1, 3, "auto"],
    "min_samples_leaf": [2, 10, 100],
}
FULL_LOGIT_GRID = {"C": [100.0, 10.0, 1.0, 0.1, 0.01]}

# scaled-down grid that trains in seconds per trial on one core
DESK_LSTM_GRID = {
    "hidden": [16, 32],
    "head": [16, 32],
    "dropout": [0.0, 0.2],
    "epochs": [6, 10],
    "lr": [1e-3, 3e-3],
    "batch_size": [128, 256],
}


def desk_generator(**overrides) -> GeneratorConfig:
    """Default stream (20k cards, 60 days) with fraud raised to 0.5% of transactions.

    At the calibrated 0.0263% a desk-sized test period holds a few dozen frauds,
    too few for stable AUCPR.
    """
    base = dict(fraud_txn_rate_target=0.005)
    base.update(overrides)
    return GeneratorConfig(**base)


def desk_train_config(**overrides) -> TrainConfig:
    base = dict(hidden=32, head=32, dropout=0.2, epochs=8, lr=5e-3, batch_size=256)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    triplet: Triplet

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind == "lstm" and self.triplet.m_future > 0:
            raise ValueError(f"LSTM cannot use future context ({self.triplet})")
        if self.kind == "bilstm" and self.triplet.m_future == 0:
            raise ValueError(f"Bi-LSTM needs future context ({self.triplet})")

    @property
    def label(self) -> str:
        return f"{_KIND_LABEL[self.kind]} {self.triplet}"

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        m = re.fullmatch(r"\s*([A-Za-z-]+)\s+(\d+-1-\d+)\s*", text)
        if not m:
            raise ValueError(f"model must look like 'Bi-LSTM 4-1-2', got {text!r}")
        name = m.group(1).lower()
        kind = _LABEL_KIND.get(name, name)
        return cls(kind, Triplet.parse(m.group(2)))

    def __str__(self) -> str:
        return self.label


@dataclass
class ExperimentSpec:
    name: str = "custom"
    models: tuple[ModelSpec, ...] = ()
    feature_sets: tuple[str, ...] = (BASE, BASE_AGG)
    n_runs: int = 5
    base_seed: int = 0
    split: str = "1-40,41-47,48-60"
    keep_ratio_genuine: float = 0.1
    search_iter: int = 0  # 0 trains the fixed configs below
    generator: GeneratorConfig = field(default_factory=desk_generator)
    data_dir: str | None = None  # read a stream instead of generating one
    train: TrainConfig = field(default_factory=desk_train_config)
    rf: bl.ForestConfig = field(default_factory=lambda: bl.ForestConfig(n_estimators=30, min_samples_leaf=20))
    dt: bl.TreeConfig = field(default_factory=lambda: bl.TreeConfig(min_samples_leaf=100, max_features=None))
    logit: bl.LogisticConfig = field(default_factory=bl.LogisticConfig)

    def validate(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not self.models:
            raise ValueError("an experiment needs at least one model")
        labels = [m.label for m in self.models]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate models in {labels}")
        for fs in self.feature_sets:
            normalize_feature_set(fs)
        SplitSpec.parse(self.split)
        if not 0.0 <= self.keep_ratio_genuine <= 1.0:
            raise ValueError("keep_ratio_genuine must lie in [0, 1]")
        if self.search_iter < 0:
            raise ValueError("search_iter must be >= 0")
        self.generator.validate()

    @property
    def max_past(self) -> int:
        return max(m.triplet.m_past for m in self.models)

    @property
    def max_future(self) -> int:
        return max(m.triplet.m_future for m in self.models)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "models": [m.label for m in self.models],
            "feature_sets": [normalize_feature_set(f) for f in self.feature_sets],
            "n_runs": self.n_runs, "base_seed": self.base_seed, "split": self.split,
            "keep_ratio_genuine": self.keep_ratio_genuine, "search_iter": self.search_iter,
            "generator": self.generator.to_dict(), "data_dir": self.data_dir,
            "train": dataclasses.asdict(self.train), "rf": dataclasses.asdict(self.rf),
            "dt": dataclasses.asdict(self.dt), "logit": dataclasses.asdict(self.logit),
        }

    def run_key(self, run: int) -> str:
        """Content hash of everything that determines one run's results."""
        d = self.to_dict()
        for k in ("name", "n_runs", "base_seed"):
            d.pop(k)
        # configs of absent model kinds do not affect the run
        kinds = {m.kind for m in self.models}
        for section, users in (("train", {"lstm", "bilstm"}), ("rf", {"rf"}), ("dt", {"dt"}), ("logit", {"logit"})):
            if not kinds & users:
                d.pop(section)
        d["seed"] = self.base_seed + run
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


PRESETS: dict[str, tuple[str, ...]] = {
    "table1": ("RF 0-1-0", "LSTM 4-1-0", "LSTM 6-1-0", "Bi-LSTM 4-1-2"),
    "table2": ("LSTM 4-1-0", "Bi-LSTM 3-1-1", "Bi-LSTM 2-1-2", "Bi-LSTM 1-1-3"),
    "table3": ("LSTM 9-1-0", "Bi-LSTM 2-1-2", "Bi-LSTM 4-1-2"),
    "appendix": ("Logit 0-1-0", "DT 0-1-0", "RF 0-1-0"),
}


def preset(name: str, **overrides) -> ExperimentSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    spec = ExperimentSpec(name=name, models=tuple(ModelSpec.parse(m) for m in PRESETS[name]))
    for k, v in overrides.items():
        if not hasattr(spec, k):
            raise ValueError(f"unknown experiment field {k!r}")
        setattr(spec, k, v)
    return spec


# --------------------------------------------------------------------------
# random search


def grid_size(grid: dict[str, list]) -> int:
    return math.prod(len(v) for v in grid.values())


def sample_grid(grid: dict[str, list], n_iter: int, seed: int) -> list[dict]:
    """``n_iter`` distinct grid points drawn uniformly (all of them if the grid is smaller)."""
    if not grid or grid_size(grid) == 0:
        raise ValueError("search grid is empty")
    keys = sorted(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EA]))
    if n_iter >= len(points):
        idx = np.arange(len(points))
    else:
        idx = rng.choice(len(points), size=n_iter, replace=False)
    return [dict(zip(keys, points[i])) for i in idx]


@dataclass
class SearchResult:
    best: dict
    best_score: float
    trials: list[tuple[dict, float]]


def random_search(grid: dict[str, list], objective: Callable[[dict], float], n_iter: int = 40,
                  seed: int = 0) -> SearchResult:
    """Maximise ``objective`` over sampled grid points; ties keep the earlier trial."""
    trials = []
    best, best_score = None, -math.inf
    for point in sample_grid(grid, n_iter, seed):
        score = float(objective(point))
        trials.append((point, score))
        if score > best_score:
            best, best_score = point, score
    if best is None:
        best, best_score = trials[0]
    return SearchResult(best, best_score, trials)


def validation_split(ds: SequenceDataset, split: SplitSpec, fraction: float = 0.2):
    fit_iv, val_iv = split.validation(fraction)
    return ds.in_interval(fit_iv), ds.in_interval(val_iv)


def _safe_aucpr(scores, labels) -> float:
    return aucpr_transaction(scores, labels) if np.any(labels) else 0.0


def search_model(model: ModelSpec, ds: SequenceDataset, split: SplitSpec, grid: dict[str, list],
                 base, n_iter: int = 40, seed: int = 0) -> SearchResult:
    """Random search on the most recent 20% of the training interval."""
    fit, val = validation_split(ds, split)
    if len(fit) == 0 or len(val) == 0 or not fit.label.any():
        raise ValueError("validation split left an empty or fraud-free slice")

    def objective(point):
        cfg = dataclasses.replace(base, **point)
        fitted = fit_model(model, fit, cfg)
        return _safe_aucpr(score_model(model, fitted, val), val.label)

    return random_search(grid, objective, n_iter, seed)


# --------------------------------------------------------------------------
# training and scoring one model


def fit_model(model: ModelSpec, ds: SequenceDataset, config):
    if model.kind in ("lstm", "bilstm"):
        net, _ = train(ds, config, bidirectional=model.kind == "bilstm")
        return net
    X = bl.flatten_dataset(ds)
    if model.kind == "rf":
        return bl.train_forest(X, ds.label, config)
    if model.kind == "dt":
        return bl.train_tree(X, ds.label, config)
    return bl.train_logistic(X, ds.label, config)


def score_model(model: ModelSpec, fitted, ds: SequenceDataset) -> np.ndarray:
    if model.kind in ("lstm", "bilstm"):
        return fitted.predict_proba(ds.X)
    return fitted.predict_proba(bl.flatten_dataset(ds))


def _model_config(spec: ExperimentSpec, model: ModelSpec, seed: int):
    cfg = {"lstm": spec.train, "bilstm": spec.train, "rf": spec.rf, "dt": spec.dt, "logit": spec.logit}[model.kind]
    return dataclasses.replace(cfg, seed=seed)


def _grid_for(model: ModelSpec) -> dict[str, list]:
    return {"lstm": DESK_LSTM_GRID, "bilstm": DESK_LSTM_GRID, "rf": FULL_RF_GRID,
            "dt": FULL_DT_GRID, "logit": FULL_LOGIT_GRID}[model.kind]


# --------------------------------------------------------------------------
# experiment runs


@dataclass(frozen=True)
class ResultRow:
    model: str
    feature_set: str
    level: str
    mean: float
    std: float
    n_runs: int
    n_targets: int = 0  # evaluated target transactions, summed over runs

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError("std must be non-negative")


class StageError(RuntimeError):
    def __init__(self, stage: str, seed: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed for seed {seed}: {cause}")
        self.stage, self.seed = stage, seed


def load_data(spec: ExperimentSpec, seed: int) -> TransactionStream:
    if spec.data_dir is not None:
        return read_stream(spec.data_dir)[0]
    stream, _ = generate(dataclasses.replace(spec.generator, seed=seed))
    return stream


def run_once(spec: ExperimentSpec, run: int, log: Callable[[str], None] | None = None) -> dict:
    """All metrics of one seed: ``{"targets": n, "scores": {label: {fs: {level: value}}}}``."""
    seed = spec.base_seed + run
    split = SplitSpec.parse(spec.split)
    say = log or (lambda _msg: None)
    stage = "data"
    try:
        stream = load_data(spec, seed)
        stage = "features"
        in_train = (stream.timestamp >= split.train[0]) & (stream.timestamp < split.train[1])
        aggs = stream_aggregates(stream)
        pipeline = fit_pipeline(stream.take(np.flatnonzero(in_train)), seed=seed,
                                train_aggregates=aggs[in_train])
        out: dict = {"scores": {}}
        targets = None
        for fs in spec.feature_sets:
            fs = normalize_feature_set(fs)
            stage = f"features[{fs}]"
            matrix = pipeline.transform(stream, fs, aggs)
            for model in spec.models:
                stage = f"sequences[{model.label}, {fs}]"
                kw = dict(min_past=spec.max_past, min_future=spec.max_future)
                train_ds = make_dataset(stream, model.triplet, matrix, split.train, **kw)
                train_ds = sample_dataset_accounts(train_ds, spec.keep_ratio_genuine, seed)
                test_ds = make_dataset(stream, model.triplet, matrix, split.test, **kw)
                if targets is None:
                    targets = test_ds.txn_id
                elif not np.array_equal(targets, test_ds.txn_id):
                    raise AssertionError("models were not evaluated on the same target set")
                stage = f"train[{model.label}, {fs}]"
                cfg = _model_config(spec, model, seed)
                if spec.search_iter > 0:
                    res = search_model(model, train_ds, split, _grid_for(model), cfg, spec.search_iter, seed)
                    cfg = dataclasses.replace(cfg, **res.best)
                fitted = fit_model(model, train_ds, cfg)
                stage = f"evaluate[{model.label}, {fs}]"
                scores = score_model(model, fitted, test_ds)
                vals = {lvl: evaluate_level(lvl, test_ds.card_id, scores, test_ds.label,
                                            test_ds.timestamp, test_ds.txn_id) for lvl in LEVELS}
                out["scores"].setdefault(model.label, {})[fs] = vals
                say(f"seed {seed} {model.label:<14} {fs:<8} " + " ".join(f"{k}={v:.4f}" for k, v in vals.items()))
        out["targets"] = int(len(targets))
        out["fraud_targets"] = int(stream.label[np.isin(stream.txn_id, targets)].sum())
        return out
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(stage, seed, exc) from exc


def run_experiment(spec: ExperimentSpec, cache_dir: str | Path | None = None,
                   log: Callable[[str], None] | None = None) -> list[ResultRow]:
    spec.validate()
    runs = []
    for r in range(spec.n_runs):
        path = Path(cache_dir) / f"run-{spec.run_key(r)}.json" if cache_dir is not None else None
        if path is not None and path.exists():
            with open(path) as fh:
                runs.append(json.load(fh))
            continue
        res = run_once(spec, r, log)
        # round-trip through JSON so cached and fresh runs are indistinguishable
        res = json.loads(json.dumps(res, sort_keys=True))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w") as fh:
                json.dump(res, fh, sort_keys=True)
        runs.append(res)
    return aggregate_runs(spec, runs)


def aggregate_runs(spec: ExperimentSpec, runs: list[dict]) -> list[ResultRow]:
    rows = []
    n_targets = sum(r["targets"] for r in runs)
    for model in spec.models:
        for fs in spec.feature_sets:
            fs = normalize_feature_set(fs)
            for lvl in LEVELS:
                v = np.array([r["scores"][model.label][fs][lvl] for r in runs], dtype=np.float64)
                rows.append(ResultRow(model.label, fs, lvl, float(v.mean()), float(v.std()), len(v), n_targets))
    return rows


def mean_of(rows: list[ResultRow], model: str, feature_set: str = BASE_AGG, level: str = "txn") -> float:
    for r in rows:
        if r.model == model and r.feature_set == normalize_feature_set(feature_set) and r.level == level:
            return r.mean
    raise KeyError((model, feature_set, level))


# --------------------------------------------------------------------------
# reports

CSV_FIELDS = [f.name for f in dataclasses.fields(ResultRow)]


def best_models(rows: list[ResultRow]) -> set[tuple[str, str, str]]:
    """(model, feature_set, level) keys holding the best mean of their (feature_set, level) row; ties share."""
    best: dict[tuple[str, str], float] = {}
    for r in rows:
        key = (r.feature_set, r.level)
        best[key] = max(best.get(key, -math.inf), r.mean)
    return {(r.model, r.feature_set, r.level) for r in rows if r.mean == best[(r.feature_set, r.level)]}


def report(rows: list[ResultRow], fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**dataclasses.asdict(r), "mean": repr(r.mean), "std": repr(r.std)})
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    if not rows:
        return ""
    models = list(dict.fromkeys(r.model for r in rows))
    keys = list(dict.fromkeys((r.feature_set, r.level) for r in rows))
    cell = {(r.model, r.feature_set, r.level): r for r in rows}
    best = best_models(rows)
    header = ["features", "metric"] + models
    lines = []
    for fs, lvl in keys:
        line = [fs, lvl]
        for m in models:
            r = cell.get((m, fs, lvl))
            if r is None:
                line.append("-")
                continue
            txt = f"{r.mean:.3f}±{r.std:.3f}"
            line.append(f"**{txt}**" if (m, fs, lvl) in best else txt)
        lines.append(line)
    widths = [max(len(str(x[i])) for x in [header] + lines) for i in range(len(header))]
    fmt_line = lambda xs: "  ".join(str(x).ljust(w) for x, w in zip(xs, widths)).rstrip()
    out = [fmt_line(header)] + [fmt_line(x) for x in lines]
    n = {r.n_targets for r in rows}
    if len(n) == 1:
        out.append(f"(evaluated on {n.pop()} target transactions over {rows[0].n_runs} runs)")
    return "\n".join(out) + "\n"


def parse_report_csv(text: str) -> list[ResultRow]:
    rows = []
    for d in csv.DictReader(io.StringIO(text)):
        rows.append(ResultRow(d["model"], d["feature_set"], d["level"], float(d["mean"]), float(d["std"]),
                              int(d["n_runs"]), int(d["n_targets"])))
    return rows


# --------------------------------------------------------------------------
# key=value configuration files

_SECTIONS = {"gen": GeneratorConfig, "train": TrainConfig, "rf": bl.ForestConfig,
             "dt": bl.TreeConfig, "logit": bl.LogisticConfig}
_SECTION_FIELD = {"gen": "generator", "train": "train", "rf": "rf", "dt": "dt", "logit": "logit"}


def _coerce(text: str, current):
    text = text.strip()
    if text.lower() in ("none", "null"):
        return None
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(float(x) for x in text.split(","))
    if current is None or isinstance(current, str):
        # optional or mixed fields (max_features: int or rule name): try int, float, then string
        for conv in (int, float):
            try:
                return conv(text)
            except ValueError:
                pass
    return text


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def spec_from_config(entries: dict[str, str], base: ExperimentSpec | None = None) -> ExperimentSpec:
    """Apply key=value entries to ``base`` (or an empty spec).

    Top-level keys mirror :class:`ExperimentSpec`; sub-configs use a prefix:
    ``gen.``, ``train.``, ``rf.``, ``dt.``, ``logit.``.  ``preset`` selects a
    preset as the starting point.
    """
    entries = dict(entries)
    if "preset" in entries:
        base = preset(entries.pop("preset"))
    spec = dataclasses.replace(base) if base is not None else ExperimentSpec()
    subs: dict[str, dict] = {}
    for key, value in entries.items():
        if "." in key:
            sec, _, name = key.partition(".")
            if sec not in _SECTIONS:
                raise ValueError(f"unknown config section {sec!r} in {key!r}")
            cur = getattr(spec, _SECTION_FIELD[sec])
            if name not in {f.name for f in dataclasses.fields(cur)}:
                raise ValueError(f"unknown key {key!r}")
            subs.setdefault(sec, {})[name] = _coerce(value, getattr(cur, name))
            continue
        if key == "models":
            spec.models = tuple(ModelSpec.parse(m) for m in value.split(",") if m.strip())
        elif key == "feature_sets":
            spec.feature_sets = tuple(normalize_feature_set(f) for f in value.split(",") if f.strip())
        elif key in ("name", "split", "data_dir"):
            setattr(spec, key, None if value.lower() == "none" and key == "data_dir" else value)
        elif key in ("n_runs", "base_seed", "search_iter"):
            setattr(spec, key, int(value))
        elif key == "keep_ratio_genuine":
            spec.keep_ratio_genuine = float(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    for sec, vals in subs.items():
        setattr(spec, _SECTION_FIELD[sec], dataclasses.replace(getattr(spec, _SECTION_FIELD[sec]), **vals))
    spec.validate()
    return spec


def load_config(path: str | Path, base: ExperimentSpec | None = None) -> ExperimentSpec:
    with open(path) as fh:
        return spec_from_config(parse_config_text(fh.read()), base)


__all__ = [
    "ModelSpec", "ExperimentSpec", "ResultRow", "SearchResult", "StageError", "PRESETS", "preset",
    "FULL_LSTM_GRID", "FULL_RF_GRID", "FULL_DT_GRID", "FULL_LOGIT_GRID", "DESK_LSTM_GRID",
    "desk_generator", "desk_train_config", "grid_size", "sample_grid", "random_search", "search_model", "fit_model", "score_model",
    "run_once", "run_experiment", "aggregate_runs", "mean_of", "report", "parse_report_csv", "best_models",
    "parse_config_text", "spec_from_config", "load_config", "FEATURE_SETS",
]
