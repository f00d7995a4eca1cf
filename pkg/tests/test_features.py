import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudseq.datagen import CardTimeline
from fraudseq.features import (AGGREGATE_NAMES, BASE, BASE_AGG, N_AGGREGATES, clip, compute_aggregates,
                               fit_pipeline, fit_stats, stream_aggregates)
from fraudseq.embeddings import EmbeddingTable
from fraudseq.features import FeaturePipeline
from conftest import make_stream
from oracles import aggregates_oracle

DAY = 86400


@st.composite
def timelines(draw, max_n=20):
    n = draw(st.integers(1, max_n))
    gaps = draw(st.lists(st.sampled_from([0, 1, 60, 3600, 20000, DAY - 1, DAY, DAY + 1, 2 * DAY]),
                         min_size=n, max_size=n))
    times = list(np.cumsum(gaps) + 1_000_000)
    amounts = draw(st.lists(st.floats(0, 2000, allow_nan=False).map(lambda v: round(v, 2)), min_size=n, max_size=n))
    small = st.lists(st.integers(0, 2), min_size=n, max_size=n)
    return times, amounts, draw(small), draw(small), draw(small)


def _timeline(times, amounts, countries, mccs, terms):
    return CardTimeline(0, make_stream(times, amounts, countries=countries, mccs=mccs, terminals=terms))


def test_clip_example():
    assert clip(np.array([0.0, 500.0, 1500.0]), (0.0, 1000.0)).tolist() == [0.0, 500.0, 1000.0]


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_clip_idempotent(xs):
    x = np.array(xs)
    once = clip(x, (0.0, 1000.0))
    assert np.array_equal(clip(once, (0.0, 1000.0)), once)


def test_first_transaction_has_empty_window():
    tl = _timeline([100, 200], [10.0, 20.0], [0, 0], [0, 0], [0, 0])
    out = compute_aggregates(tl, 0)
    assert np.all(out[:-1] == 0.0) and out[-1] == DAY


def test_same_country_arithmetic():
    t = 5 * DAY
    tl = _timeline([t - 7200, t - 3600, t], [10.0, 20.0, 99.0], [4, 4, 4], [0, 1, 2], [0, 0, 1])
    out = dict(zip(AGGREGATE_NAMES, compute_aggregates(tl, 2)))
    assert out["sum_amount_24h_same_country"] == 30.0
    assert out["count_amount_24h_same_country"] == 2.0
    assert out["mean_amount_24h_same_country"] == 15.0
    assert out["count_amount_24h_same_mcc"] == 0.0
    assert out["secs_since_prev"] == 3600.0


def test_window_is_half_open():
    tl = _timeline([0, 1, DAY], [5.0, 7.0, 1.0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    # the transaction exactly 24h earlier is excluded, the one at 24h-1s is kept
    assert compute_aggregates(tl, 2)[0] == 7.0


@settings(max_examples=300, deadline=None)
@given(timelines())
def test_aggregates_match_oracle(tl):
    times, amounts, c, m, term = tl
    timeline = _timeline(times, amounts, c, m, term)
    for i in range(len(times)):
        got = compute_aggregates(timeline, i)
        want = aggregates_oracle(times, amounts, c, m, term, i)
        assert np.allclose(got, want, rtol=0, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(timelines(), st.data())
def test_aggregates_are_causal(tl, data):
    times, amounts, c, m, term = tl
    i = data.draw(st.integers(0, len(times) - 1))
    before = compute_aggregates(_timeline(times, amounts, c, m, term), i)
    # rewrite everything after i and the current label/amount; keep the current time and keys
    amounts2 = list(amounts)
    amounts2[i] = amounts[i] + 123.0
    for j in range(i + 1, len(times)):
        amounts2[j] = data.draw(st.floats(0, 5000, allow_nan=False))
    after = compute_aggregates(_timeline(times, amounts2, c, m, term), i)
    assert np.array_equal(before, after)


@settings(max_examples=50, deadline=None)
@given(st.lists(timelines(max_n=8), min_size=1, max_size=4))
def test_stream_aggregates_match_single_row(tls):
    times, amounts, cards, cs, ms, ts = [], [], [], [], [], []
    for k, (t, a, c, m, term) in enumerate(tls):
        times += list(t)
        amounts += a
        cards += [k] * len(t)
        cs += c
        ms += m
        ts += term
    stream = make_stream(times, amounts, cards, countries=cs, mccs=ms, terminals=ts)
    got = stream_aggregates(stream)
    order = stream.card_order()
    for k in range(len(tls)):
        rows = order[stream.card_id[order] == k]
        tl = CardTimeline(k, stream.take(rows))
        for pos, r in enumerate(rows):
            assert np.allclose(got[r], compute_aggregates(tl, pos), atol=1e-9)


def test_standardisation_on_training_data(small_data):
    stream, _ = small_data
    stats = fit_stats(stream)
    z = stats.standardize_numeric(stream)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-9)


def test_constant_column_gives_zeros_and_warns():
    stream = make_stream([1, 2, 3], [50.0, 50.0, 50.0])
    with pytest.warns(UserWarning, match="constant"):
        stats = fit_stats(stream)
    z = stats.standardize_numeric(stream)
    assert np.all(z == 0.0)


def test_stats_fit_after_clipping():
    stream = make_stream([1, 2, 3], [0.0, 500.0, 1500.0])
    stats = fit_stats(stream)
    assert stats.mean[0] == pytest.approx(500.0)


@pytest.fixture(scope="module")
def pipeline(small_data):
    stream, _ = small_data
    return fit_pipeline(stream, seed=0)


def test_base_agg_adds_thirteen(pipeline):
    assert N_AGGREGATES == 13
    assert pipeline.dim(BASE_AGG) - pipeline.dim(BASE) == 13


def test_vectorize_matches_transform(pipeline, small_data):
    stream, _ = small_data
    aggs = stream_aggregates(stream)
    M = pipeline.transform(stream, BASE_AGG, aggs)
    for i in (0, 17, len(stream) - 1):
        v = pipeline.vectorize(stream.transaction(i), BASE_AGG, aggs[i])
        assert np.allclose(v.values, M[i], atol=1e-12)
        assert v.layout == pipeline.layout(BASE_AGG)
    a = pipeline.vectorize(stream.transaction(3), BASE)
    b = pipeline.vectorize(stream.transaction(3), BASE)
    assert np.array_equal(a.values, b.values)


def test_training_aggregate_columns_centred(pipeline, small_data):
    stream, _ = small_data
    M = pipeline.transform(stream, BASE_AGG)
    assert np.all(np.abs(M[:, -13:].mean(axis=0)) < 1e-9)


def test_unknown_category_uses_oov(pipeline, small_data):
    stream, _ = small_data
    txn = stream.transaction(0)
    txn.features["mcc"] = 10_000
    v = pipeline.vectorize(txn, BASE)
    table = pipeline.embeddings["mcc"]
    start = pipeline.layout(BASE).index("mcc[0]")
    assert np.array_equal(v.values[start:start + table.dim], table.oov)


def test_pipeline_round_trip(pipeline, small_data, tmp_path):
    stream, _ = small_data
    pipeline.save(tmp_path / "stats.json", tmp_path / "emb.json")
    again = FeaturePipeline.load(tmp_path / "stats.json", tmp_path / "emb.json")
    assert np.array_equal(again.transform(stream, BASE_AGG), pipeline.transform(stream, BASE_AGG))


def test_embedding_table_total():
    t = EmbeddingTable("f", 4, [1, 5, 9], np.arange(12.0).reshape(3, 4), np.full(4, -1.0))
    out = t.lookup([5, 2, 9, 100])
    assert out.shape == (4, 4)
    assert np.array_equal(out[1], t.oov) and np.array_equal(out[0], [4, 5, 6, 7])
