import numpy as np
import pytest

from fraudseq.embeddings import cosine, load_embeddings, save_embeddings, train_value_embeddings
from conftest import make_stream


def _paired_corpus(n_cards=300, n_pairs=6, seed=0):
    # each card draws its values from one pair (2k, 2k+1), so the two members always co-occur
    rng = np.random.default_rng(seed)
    cards, mccs = [], []
    for c in range(n_cards):
        k = int(rng.integers(0, n_pairs))
        seq = 2 * k + rng.integers(0, 2, size=8)
        cards += [c] * len(seq)
        mccs += seq.tolist()
    n = len(cards)
    return make_stream(np.arange(n) + 1, np.ones(n), cards, mccs=mccs)


@pytest.fixture(scope="module")
def paired_table():
    return train_value_embeddings(_paired_corpus(), "mcc", dim=4, epochs=10, seed=0, lr=0.05)


def test_co_occurring_values_are_similar(paired_table):
    t = paired_table
    pair = cosine(t[0], t[1])
    rng = np.random.default_rng(1)
    others = [cosine(t[a], t[b]) for a, b in (rng.choice(12, 2, replace=False) for _ in range(200))]
    assert pair > np.mean(others)
    assert all(cosine(t[2 * k], t[2 * k + 1]) > np.mean(others) for k in range(6))


def test_dimension_and_oov(paired_table):
    assert paired_table.vectors.shape == (12, 4)
    assert np.array_equal(paired_table[999], paired_table.oov)
    assert paired_table.lookup([0, 5, 999]).shape == (3, 4)


def test_single_value_vocabulary_rejected():
    stream = make_stream([1, 2, 3], [1.0, 1.0, 1.0], mccs=[7, 7, 7])
    with pytest.raises(ValueError, match="vocabulary"):
        train_value_embeddings(stream, "mcc", dim=4)


def test_deterministic_per_seed():
    s = _paired_corpus(50)
    a = train_value_embeddings(s, "mcc", dim=4, seed=5)
    b = train_value_embeddings(s, "mcc", dim=4, seed=5)
    c = train_value_embeddings(s, "mcc", dim=4, seed=6)
    assert np.array_equal(a.vectors, b.vectors)
    assert not np.array_equal(a.vectors, c.vectors)


def test_json_round_trip(paired_table, tmp_path):
    save_embeddings({"mcc": paired_table}, tmp_path / "e.json")
    again = load_embeddings(tmp_path / "e.json")["mcc"]
    assert np.array_equal(again.vectors, paired_table.vectors)
    assert np.array_equal(again.vocab, paired_table.vocab)
    assert np.array_equal(again.oov, paired_table.oov)
