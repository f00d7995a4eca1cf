import dataclasses
import math

import numpy as np
import pytest

from fraudseq.baselines import ForestConfig, TreeConfig
from fraudseq.harness import (DESK_LSTM_GRID, FULL_LSTM_GRID, PRESETS, ExperimentSpec, ModelSpec, ResultRow,
                              StageError, best_models, desk_generator, desk_train_config, grid_size,
                              parse_config_text, parse_report_csv, preset, random_search, report,
                              run_experiment, sample_grid, spec_from_config)
from fraudseq.metrics import LEVELS


def test_lstm_grid_size():
    assert grid_size(FULL_LSTM_GRID) == 864 == 3 * 3 * 2 * 3 * 4 * 4


def test_singleton_grid():
    calls = []
    res = random_search({"a": [7]}, lambda p: calls.append(p) or 0.3, n_iter=40)
    assert res.best == {"a": 7} and len(calls) == 1


def test_exhaustive_when_budget_exceeds_grid():
    grid = {"a": [1, 2, 3], "b": ["x", "y"]}
    pts = sample_grid(grid, 10, seed=0)
    assert len(pts) == 6 and len({tuple(sorted(p.items())) for p in pts}) == 6
    res = random_search(grid, lambda p: p["a"] + (p["b"] == "y"), n_iter=10)
    assert res.best == {"a": 3, "b": "y"}


def test_sampling_without_replacement_is_seeded():
    a = sample_grid(DESK_LSTM_GRID, 20, seed=4)
    assert a == sample_grid(DESK_LSTM_GRID, 20, seed=4)
    assert len({tuple(sorted(p.items())) for p in a}) == 20
    assert a != sample_grid(DESK_LSTM_GRID, 20, seed=5)


def test_search_ties_keep_first_trial():
    res = random_search({"a": [1, 2, 3, 4]}, lambda p: 1.0, n_iter=4, seed=2)
    assert res.best == res.trials[0][0]


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        sample_grid({}, 3, 0)
    with pytest.raises(ValueError):
        sample_grid({"a": []}, 3, 0)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_model_lists(name):
    spec = preset(name)
    assert [m.label for m in spec.models] == list(PRESETS[name])
    spec.validate()


def test_preset_table_contents():
    assert PRESETS["table1"] == ("RF 0-1-0", "LSTM 4-1-0", "LSTM 6-1-0", "Bi-LSTM 4-1-2")
    assert PRESETS["table2"] == ("LSTM 4-1-0", "Bi-LSTM 3-1-1", "Bi-LSTM 2-1-2", "Bi-LSTM 1-1-3")
    assert PRESETS["table3"] == ("LSTM 9-1-0", "Bi-LSTM 2-1-2", "Bi-LSTM 4-1-2")


def test_model_spec_validation():
    assert ModelSpec.parse("Bi-LSTM 4-1-2").kind == "bilstm"
    assert ModelSpec.parse("rf 0-1-0").label == "RF 0-1-0"
    with pytest.raises(ValueError):
        ModelSpec.parse("LSTM 4-1-2")
    with pytest.raises(ValueError):
        ModelSpec.parse("Bi-LSTM 4-1-0")
    with pytest.raises(ValueError):
        ModelSpec.parse("GBT 0-1-0")


def test_spec_rejects_zero_runs():
    with pytest.raises(ValueError):
        preset("table1", n_runs=0).validate()


def _rows():
    return [ResultRow("A", "base", "txn", 0.5, 0.1, 5, 100), ResultRow("B", "base", "txn", 0.5, 0.0, 5, 100),
            ResultRow("C", "base", "txn", 0.25, 0.02, 5, 100), ResultRow("A", "base", "card", 0.125, 0.0, 5, 100)]


def test_ties_share_the_best_mark():
    assert best_models(_rows()) == {("A", "base", "txn"), ("B", "base", "txn"), ("A", "base", "card")}
    text = report(_rows())
    assert text.count("**") == 6


def test_single_row_report():
    lines = report([ResultRow("A", "base", "txn", 0.5, 0.1, 5, 10)]).splitlines()
    assert len(lines) == 3 and "**0.500±0.100**" in lines[1]


def test_csv_round_trip():
    rows = _rows() + [ResultRow("D", "base+agg", "card-early", 1 / 3, math.pi / 100, 5, 100)]
    assert parse_report_csv(report(rows, "csv")) == rows


def test_negative_std_rejected():
    with pytest.raises(ValueError):
        ResultRow("A", "base", "txn", 0.5, -0.1, 5)


def test_config_parsing():
    text = """
    # comment
    preset = table2
    n_runs = 2
    keep_ratio_genuine = 0.3
    feature_sets = base+agg
    gen.n_cards = 5000
    train.epochs = 3
    rf.max_depth = 12
    """
    spec = spec_from_config(parse_config_text(text))
    assert spec.name == "table2" and spec.n_runs == 2 and spec.keep_ratio_genuine == 0.3
    assert spec.feature_sets == ("base+agg",)
    assert spec.generator.n_cards == 5000 and spec.generator.fraud_txn_rate_target == 0.005
    assert spec.train.epochs == 3 and spec.train.lr == desk_train_config().lr
    assert spec.rf.max_depth == 12


@pytest.mark.parametrize("text", ["n_runs", "bogus = 1", "gen.bogus = 1", "zzz.a = 1", "n_runs = 0",
                                  "models = LSTM 4-1-2"])
def test_config_errors(text):
    with pytest.raises(ValueError):
        spec_from_config(parse_config_text("preset = table1\n" + text))


def _tiny_spec(**kw):
    base = dict(name="tiny", models=(ModelSpec.parse("RF 0-1-0"), ModelSpec.parse("LSTM 2-1-0"),
                                     ModelSpec.parse("Bi-LSTM 1-1-1")),
                feature_sets=("base+agg",), n_runs=2, keep_ratio_genuine=0.5,
                generator=desk_generator(n_cards=800, fraud_txn_rate_target=0.01, fraud_card_rate=0.2),
                train=desk_train_config(hidden=4, head=4, epochs=1), rf=ForestConfig(n_estimators=3,
                                                                                      min_samples_leaf=10))
    base.update(kw)
    return ExperimentSpec(**base)


@pytest.fixture(scope="module")
def tiny_rows(tmp_path_factory):
    cache = tmp_path_factory.mktemp("cache")
    return run_experiment(_tiny_spec(), cache), cache


def test_run_emits_all_rows(tiny_rows):
    rows, _ = tiny_rows
    assert len(rows) == 3 * 1 * len(LEVELS)
    assert all(r.n_runs == 2 and 0 <= r.mean <= 1 and r.std >= 0 for r in rows)
    assert len({r.n_targets for r in rows}) == 1


def test_caching_is_transparent(tiny_rows):
    rows, cache = tiny_rows
    assert len(list(cache.glob("run-*.json"))) == 2
    assert run_experiment(_tiny_spec(), cache) == rows
    assert run_experiment(_tiny_spec()) == rows


def test_run_key_ignores_name_and_tracks_content():
    a, b = _tiny_spec(), _tiny_spec(name="other")
    assert a.run_key(0) == b.run_key(0) != a.run_key(1)
    c = _tiny_spec(train=desk_train_config(hidden=5, head=4, epochs=1))
    assert c.run_key(0) != a.run_key(0)
    # the tiny spec has no DT, so the DT config cannot change its runs
    d = _tiny_spec(dt=TreeConfig(min_samples_leaf=3))
    assert d.run_key(0) == a.run_key(0)


def test_stage_failure_names_stage_and_seed(tmp_path):
    spec = _tiny_spec(data_dir=str(tmp_path / "missing"), n_runs=1, base_seed=7)
    with pytest.raises(StageError, match=r"'data'.*seed 7"):
        run_experiment(spec)


def test_mixed_type_config_values():
    spec = spec_from_config(parse_config_text("preset = appendix\ndt.max_features = 3\nrf.max_depth = none"))
    assert spec.dt.max_features == 3 and spec.rf.max_depth is None
    spec = spec_from_config(parse_config_text("preset = appendix\ndt.max_features = sqrt"))
    assert spec.dt.max_features == "sqrt"
