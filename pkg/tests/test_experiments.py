"""Desk-scale directional checks for the baselines (5 seeds, Base+Agg, a few minutes)."""

import os

import pytest

from fraudseq.harness import ExperimentSpec, ModelSpec, mean_of, run_experiment

CACHE = os.environ.get("FRAUDSEQ_ACCEPTANCE_CACHE")


@pytest.fixture(scope="module")
def baseline_rows():
    models = tuple(ModelSpec.parse(m) for m in ("Logit 0-1-0", "DT 0-1-0", "RF 0-1-0", "RF 4-1-2"))
    return run_experiment(ExperimentSpec(name="baselines", models=models, feature_sets=("base+agg",)), CACHE)


def test_forest_beats_tree_beats_logistic(baseline_rows):
    rf, dt, lr = (mean_of(baseline_rows, m) for m in ("RF 0-1-0", "DT 0-1-0", "Logit 0-1-0"))
    assert rf > dt > lr, (rf, dt, lr)


def test_flattened_context_helps_the_forest(baseline_rows):
    assert mean_of(baseline_rows, "RF 4-1-2") > mean_of(baseline_rows, "RF 0-1-0")
