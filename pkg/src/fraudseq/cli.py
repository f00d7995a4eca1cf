"""Command-line entry point: ``fraudseq <command> ...``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .datagen import GeneratorConfig, generate, read_stream, write_stream
from .features import FEATURE_SETS, FeaturePipeline, fit_pipeline, normalize_feature_set, stream_aggregates
from .harness import (DESK_LSTM_GRID, FULL_DT_GRID, FULL_LOGIT_GRID, FULL_LSTM_GRID, FULL_RF_GRID, PRESETS,
                      ModelSpec, StageError, _coerce, fit_model, load_config, parse_config_text, preset, report,
                      run_experiment, score_model, search_model)
from .metrics import LEVELS, future_availability_curves, metric_report, verification_delay_cdf
from .nets import BiLstmModel, TrainConfig, train
from .sequencing import SplitSpec, Triplet, make_dataset, read_samples, sample_dataset_accounts, write_samples

log = logging.getLogger("fraudseq")

DEFAULT_SPLIT = "1-40,41-47,48-60"
SCORE_FIELDS = ("txn_id", "card_id", "timestamp", "label", "score")


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# config helpers


def _read_entries(path) -> dict[str, str]:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_SECTION_PREFIXES = ("gen", "train", "rf", "dt", "logit")


def _build(cls, entries: dict[str, str], prefix: str, base=None, **fixed):
    """Instantiate ``cls`` from ``prefix.key`` or bare ``key`` entries.

    Keys under another section's prefix are skipped so one file can serve every command.
    """
    obj = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    vals = {}
    for key, value in entries.items():
        sec, dot, rest = key.partition(".")
        if dot and sec != prefix:
            if sec in _SECTION_PREFIXES:
                continue
            raise ConfigError(f"unknown config section {sec!r} in {key!r}")
        name = rest if dot else key
        if name not in names:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        try:
            vals[name] = _coerce(value, getattr(obj, name))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    vals.update({k: v for k, v in fixed.items() if v is not None})
    try:
        out = dataclasses.replace(obj, **vals)
        if hasattr(out, "validate"):
            out.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc
    return out


def _triplet(text: str) -> Triplet:
    try:
        return Triplet.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _split(text: str) -> SplitSpec:
    try:
        return SplitSpec.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> None:
    cfg = _build(GeneratorConfig, _read_entries(args.config), "gen", seed=args.seed)
    stream, episodes = generate(cfg)
    write_stream(stream, episodes, args.out)
    log.info("wrote %d transactions, %d episodes to %s", len(stream), len(episodes), args.out)


def cmd_featurize(args) -> None:
    fs = normalize_feature_set(args.set)
    split = _split(args.split)
    if not args.fit and not (Path(args.stats).exists() and Path(args.embeddings).exists()):
        raise ConfigError("--stats/--embeddings do not exist; pass --fit to fit them on the training interval")
    stream, _ = read_stream(args.stream)
    aggs = stream_aggregates(stream)
    if args.fit:
        in_train = (stream.timestamp >= split.train[0]) & (stream.timestamp < split.train[1])
        if not in_train.any():
            raise ValueError("no transactions in the training interval")
        pipeline = fit_pipeline(stream.take(np.flatnonzero(in_train)), seed=args.seed,
                                train_aggregates=aggs[in_train])
        pipeline.save(args.stats, args.embeddings)
    else:
        pipeline = FeaturePipeline.load(args.stats, args.embeddings)
    X = pipeline.transform(stream, fs, aggs)
    np.savez(args.out, X=X, txn_id=stream.txn_id, layout=np.array(pipeline.layout(fs)))
    log.info("wrote %s features %s to %s", fs, X.shape, args.out)


def _load_features(path, stream) -> np.ndarray:
    with np.load(path) as z:
        X, ids = z["X"], z["txn_id"]
    if not np.array_equal(ids, stream.txn_id):
        raise ValueError(f"{path} was computed for a different stream")
    return X


def cmd_sequence(args) -> None:
    triplet = _triplet(args.triplet)
    split = _split(args.split)
    if not 0.0 <= args.keep_ratio <= 1.0:
        raise ConfigError("--keep-ratio must lie in [0, 1]")
    stream, _ = read_stream(args.stream)
    X = _load_features(args.features, stream)
    interval = split.train if args.part == "train" else split.test
    ds = make_dataset(stream, triplet, X, interval, min_past=args.min_past, min_future=args.min_future)
    if args.keep_ratio < 1.0:
        ds = sample_dataset_accounts(ds, args.keep_ratio, args.seed)
    write_samples(ds, args.out)
    log.info("wrote %d %s samples (%d fraud) to %s", len(ds), triplet, int(ds.label.sum()), args.out)


def cmd_train(args) -> None:
    triplet = _triplet(args.triplet)
    cfg = _build(TrainConfig, _read_entries(args.config), "train", seed=args.seed)
    ds = read_samples(args.samples, triplet)
    if ds.triplet != triplet:
        raise ConfigError(f"samples are {ds.triplet} windows but --triplet is {triplet}")
    model, history = train(ds, cfg, log=log.info)
    model.save(args.out)
    log.info("final training loss %.5f", history[-1] if history else float("nan"))


_BASELINE_CONFIG = {"rf": (bl.ForestConfig, "rf"), "dt": (bl.TreeConfig, "dt"), "logit": (bl.LogisticConfig, "logit")}


def cmd_train_baseline(args) -> None:
    cls, prefix = _BASELINE_CONFIG[args.model]
    cfg = _build(cls, _read_entries(args.config), prefix, seed=args.seed)
    ds = read_samples(args.samples)
    fitted = fit_model(ModelSpec(args.model, ds.triplet), ds, cfg)
    bl.save_baseline(fitted, args.out)


def _load_any_model(path):
    from .checkpoint import load_checkpoint
    kind = load_checkpoint(path)[0]
    return BiLstmModel.load(path) if kind in ("lstm", "bilstm") else bl.load_baseline(path)


def _read_scores(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no scores")
    missing = set(SCORE_FIELDS) - set(rows[0])
    if missing:
        raise ValueError(f"{path} lacks columns {sorted(missing)}")
    out = {k: np.array([int(r[k]) for r in rows], dtype=np.int64) for k in SCORE_FIELDS if k != "score"}
    out["score"] = np.array([float(r["score"]) for r in rows])
    return out


def _write_scores(path, ds, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for row in zip(ds.txn_id.tolist(), ds.card_id.tolist(), ds.timestamp.tolist(), ds.label.tolist(),
                       scores.tolist()):
            w.writerow([*row[:4], repr(float(row[4]))])


def cmd_evaluate(args) -> None:
    if (args.scores is None) == (args.model is None):
        raise ConfigError("pass either --scores or --model with --samples")
    if args.model is not None:
        if args.samples is None:
            raise ConfigError("--model needs --samples")
        model = _load_any_model(args.model)
        ds = read_samples(args.samples)
        X = ds.X if isinstance(model, BiLstmModel) else bl.flatten_dataset(ds)
        scores = model.predict_proba(X)
        if args.write_scores:
            _write_scores(args.write_scores, ds, scores)
        s = {"txn_id": ds.txn_id, "card_id": ds.card_id, "timestamp": ds.timestamp, "label": ds.label,
             "score": scores}
    else:
        s = _read_scores(args.scores)
    levels = LEVELS if args.level == "all" else (args.level,)
    lines = [metric_report(lvl, s["card_id"], s["score"], s["label"], s["timestamp"], s["txn_id"]) for lvl in levels]
    _write_text(args.out, "\n".join(lines) + "\n")


_GRIDS = {"full": {"lstm": FULL_LSTM_GRID, "bilstm": FULL_LSTM_GRID, "rf": FULL_RF_GRID,
                    "dt": FULL_DT_GRID, "logit": FULL_LOGIT_GRID},
          "desk": {"lstm": DESK_LSTM_GRID, "bilstm": DESK_LSTM_GRID, "rf": FULL_RF_GRID,
                   "dt": FULL_DT_GRID, "logit": FULL_LOGIT_GRID}}


def cmd_search(args) -> None:
    split = _split(args.split)
    entries = _read_entries(args.config)
    if args.model in ("lstm", "bilstm"):
        base = _build(TrainConfig, entries, "train", seed=args.seed)
    else:
        cls, prefix = _BASELINE_CONFIG[args.model]
        base = _build(cls, entries, prefix, seed=args.seed)
    if args.n_iter < 1:
        raise ConfigError("--n-iter must be >= 1")
    ds = read_samples(args.samples)
    try:
        model = ModelSpec(args.model, ds.triplet)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = search_model(model, ds, split, _GRIDS[args.grid][args.model], base, args.n_iter, args.seed)
    out = {"model": model.label, "best": res.best, "best_validation_aucpr": res.best_score,
           "trials": [{"params": p, "validation_aucpr": v} for p, v in res.trials]}
    _write_text(args.out, json.dumps(out, sort_keys=True, indent=1) + "\n")


def cmd_run(args) -> None:
    try:
        base = preset(args.preset) if args.preset else None
        spec = load_config(args.config, base) if args.config else base
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if spec is None:
        raise ConfigError("pass --preset and/or --config")
    if args.runs is not None:
        spec.n_runs = args.runs
    if args.seed is not None:
        spec.base_seed = args.seed
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = run_experiment(spec, args.cache, log=log.info)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = report(rows, "text")
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(report(rows, "csv"))
    (out / "metrics.json").write_text(json.dumps(
        {"spec": spec.to_dict(), "rows": [dataclasses.asdict(r) for r in rows]}, sort_keys=True, indent=1) + "\n")
    sys.stdout.write(text)


def cmd_analyze_delays(args) -> None:
    stream, episodes = read_stream(args.stream)
    cdf = verification_delay_cdf(episodes)
    curves = future_availability_curves(stream, episodes, k_max=args.k_max)
    summary = {"n_episodes": len(episodes), "delay_cdf_1h": cdf.at(3600), "delay_cdf_1d": cdf.at(86400)}
    summary.update({f"curve_{k + 1}_1d": c.at(86400) for k, c in enumerate(curves)})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "delay_cdf.csv").write_text(cdf.to_csv())
        for k, c in enumerate(curves):
            (out / f"availability_{k + 1}.csv").write_text(c.to_csv())
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fraudseq", description="Sequence-context fraud detection toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a synthetic transaction stream")
    g.add_argument("--config", help="key=value file of generator settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("featurize", help="fit or apply preprocessing, embeddings and aggregates")
    f.add_argument("--stream", required=True)
    f.add_argument("--stats", required=True, help="feature statistics JSON")
    f.add_argument("--embeddings", required=True, help="embedding tables JSON")
    f.add_argument("--set", default="base+agg", choices=FEATURE_SETS)
    f.add_argument("--fit", action="store_true", help="fit stats and embeddings on the training interval")
    f.add_argument("--split", default=DEFAULT_SPLIT)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="feature matrix (.npz)")
    f.set_defaults(func=cmd_featurize)

    s = sub.add_parser("sequence", help="extract target-centred windows")
    s.add_argument("--stream", required=True)
    s.add_argument("--features", required=True, help="output of featurize")
    s.add_argument("--triplet", required=True, help="m_P-1-m_F, e.g. 4-1-2")
    s.add_argument("--split", default=DEFAULT_SPLIT)
    s.add_argument("--part", choices=("train", "test"), default="train")
    s.add_argument("--min-past", type=int, default=0, help="fair-comparison predecessor requirement")
    s.add_argument("--min-future", type=int, default=0, help="fair-comparison successor requirement")
    s.add_argument("--keep-ratio", type=float, default=1.0, help="share of genuine-only cards kept")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="samples JSONL")
    s.set_defaults(func=cmd_sequence)

    t = sub.add_parser("train", help="train an LSTM (m_F = 0) or Bi-LSTM")
    t.add_argument("--samples", required=True)
    t.add_argument("--triplet", required=True)
    t.add_argument("--config", help="key=value file of training settings")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("train-baseline", help="train a random forest, decision tree or logistic regression")
    b.add_argument("--model", required=True, choices=("rf", "dt", "logit"))
    b.add_argument("--samples", required=True)
    b.add_argument("--config")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_train_baseline)

    e = sub.add_parser("evaluate", help="AUCPR at transaction or card level")
    e.add_argument("--scores", help="CSV with txn_id,card_id,timestamp,label,score")
    e.add_argument("--model", help="checkpoint to score --samples with")
    e.add_argument("--samples")
    e.add_argument("--write-scores", help="save the computed scores as CSV")
    e.add_argument("--level", default="txn", choices=LEVELS + ("all",))
    e.add_argument("--out", help="metric JSON path (default stdout)")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("search", help="random hyperparameter search on the latest training slice")
    r.add_argument("--samples", required=True)
    r.add_argument("--model", required=True, choices=("lstm", "bilstm", "rf", "dt", "logit"))
    r.add_argument("--grid", choices=("desk", "full"), default="desk")
    r.add_argument("--n-iter", type=int, default=40)
    r.add_argument("--split", default=DEFAULT_SPLIT)
    r.add_argument("--config")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", help="result JSON path (default stdout)")
    r.set_defaults(func=cmd_search)

    x = sub.add_parser("run", help="run a multi-seed experiment")
    x.add_argument("--preset", choices=sorted(PRESETS))
    x.add_argument("--config", help="key=value experiment file")
    x.add_argument("--runs", type=int, help="override n_runs")
    x.add_argument("--seed", type=int, help="override base_seed")
    x.add_argument("--cache", help="directory for per-run result caching")
    x.add_argument("--out", required=True, help="output directory")
    x.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze-delays", help="verification-delay and future-availability curves")
    a.add_argument("--stream", required=True)
    a.add_argument("--k-max", type=int, default=4)
    a.add_argument("--out", help="directory for CSV curves")
    a.set_defaults(func=cmd_analyze_delays)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"fraudseq {args.command}: config error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        print(f"fraudseq {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"fraudseq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
