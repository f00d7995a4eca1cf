import dataclasses
import filecmp

import numpy as np
import pytest

from fraudseq.datagen import (FRAUD, SCHEMA, GeneratorConfig, assign_block_delays, card_timelines, generate,
                              generate_genuine, inject_fraud_episodes, read_stream, write_stream)
from fraudseq.metrics import future_availability_curves, verification_delay_cdf
from conftest import SMALL


def test_schema_has_thirty_columns():
    assert len(SCHEMA) == 30
    assert {"amount", "country", "mcc", "terminal_type"} <= set(SCHEMA)


def test_stream_invariants(small_data):
    stream, episodes = small_data
    assert np.all(np.diff(stream.timestamp) >= 0)
    assert np.all(stream.timestamp > 0)
    assert np.all(stream.features["amount"] >= 0)
    assert set(np.unique(stream.label)) <= {0, 1}
    for tl in card_timelines(stream)[:200]:
        assert np.all(np.diff(tl.transactions.timestamp) > 0)
    ids = {i for ep in episodes for i in ep.fraud_txn_ids}
    assert ids == set(stream.txn_id[stream.label == FRAUD].tolist())


def test_episode_bookkeeping(small_data):
    stream, episodes = small_data
    ts = dict(zip(stream.txn_id.tolist(), stream.timestamp.tolist()))
    assert episodes
    for ep in episodes:
        assert ep.block_time >= ep.first_fraud_time
        for i in ep.fraud_txn_ids:
            assert ep.first_fraud_time <= ts[i] <= ep.block_time


def test_same_seed_is_byte_identical(tmp_path):
    cfg = dataclasses.replace(SMALL, n_cards=150)
    a, ea = generate(cfg)
    b, eb = generate(cfg)
    write_stream(a, ea, tmp_path / "a")
    write_stream(b, eb, tmp_path / "b")
    for name in ("transactions.csv", "episodes.jsonl", "schema.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_different_seed_differs():
    a, _ = generate(dataclasses.replace(SMALL, n_cards=150))
    b, _ = generate(dataclasses.replace(SMALL, n_cards=150, seed=SMALL.seed + 1))
    assert len(a) != len(b) or not np.array_equal(a.timestamp, b.timestamp)


def test_csv_round_trip(tmp_path, small_data):
    stream, episodes = small_data
    write_stream(stream, episodes, tmp_path)
    again, eps = read_stream(tmp_path)
    assert np.array_equal(again.txn_id, stream.txn_id)
    assert np.array_equal(again.timestamp, stream.timestamp)
    assert np.array_equal(again.label, stream.label)
    for name in SCHEMA:
        assert np.array_equal(again.features[name], stream.features[name])
    assert eps == episodes


def test_zero_fraud_card_rate():
    stream, episodes = generate(dataclasses.replace(SMALL, fraud_card_rate=0.0))
    assert episodes == [] and not stream.label.any()


def test_unattainable_rate_reports_range():
    cfg = dataclasses.replace(SMALL, fraud_card_rate=0.001, fraud_txn_rate_target=0.5)
    with pytest.raises(ValueError, match="attainable range"):
        generate(cfg)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        dataclasses.replace(SMALL, separability=1.5).validate()
    with pytest.raises(ValueError):
        dataclasses.replace(SMALL, burst_length_pmf=(0.5, 0.4)).validate()


def test_fraud_rate_near_target():
    # about 1e6 transactions per seed; the burst-length spread makes single seeds noisy
    frauds = total = 0
    for seed in (0, 1):
        stream, _ = generate(GeneratorConfig(n_cards=40000, seed=seed))
        frauds += int(stream.label.sum())
        total += len(stream)
    assert 0.8 <= (frauds / total) / 0.000263 <= 1.2


def test_single_fraud_bursts():
    cfg = dataclasses.replace(SMALL, burst_length_pmf=(1.0,))
    genuine = generate_genuine(cfg)
    stream, episodes = inject_fraud_episodes(genuine, cfg)
    assert episodes and all(len(ep.fraud_txn_ids) == 1 for ep in episodes)
    assert int(stream.label.sum()) == len(episodes)


def test_fixed_delay_burst_span():
    cfg = dataclasses.replace(SMALL, burst_length_pmf=(0.0, 0.0, 0.0, 1.0), burst_delay_sigma=0.0,
                              burst_delay_median_s=60.0, days=400)
    genuine = generate_genuine(dataclasses.replace(cfg, days=60))
    stream, episodes = inject_fraud_episodes(genuine, cfg)
    ts = dict(zip(stream.txn_id.tolist(), stream.timestamp.tolist()))
    spans = [ts[ep.fraud_txn_ids[-1]] - ts[ep.fraud_txn_ids[0]] for ep in episodes]
    # a genuine transaction in the same second pushes a fraud by one second
    assert np.median(spans) == 180 and max(spans) <= 183


def test_zero_block_delay_is_unit_step(small_data):
    _, episodes = small_data
    cfg = dataclasses.replace(SMALL, block_fast_weight=1.0, block_fast_median_s=0.0)
    blocked = assign_block_delays(episodes, cfg)
    cdf = verification_delay_cdf(blocked)
    assert cdf.at(-1) == 0.0 and cdf.at(0) == 1.0


def test_default_bursts_give_same_day_activity():
    stream, episodes = generate(GeneratorConfig(n_cards=40000, fraud_card_rate=0.2,
                                                fraud_txn_rate_target=0.01))
    curve3 = future_availability_curves(stream, episodes, k_max=3)[2]
    assert curve3.at(86400) >= 0.6
