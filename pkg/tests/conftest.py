import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fraudseq.datagen import CATEGORICAL, NUMERIC, GeneratorConfig, TransactionStream, generate  # noqa: E402

MINI_SCHEMA = {"amount": NUMERIC, "country": CATEGORICAL, "mcc": CATEGORICAL, "terminal_type": CATEGORICAL}


def make_stream(times, amounts, card_ids=None, labels=None, countries=None, mccs=None, terminals=None):
    """A small stream with only the columns aggregates and sequencing need."""
    n = len(times)
    zeros = np.zeros(n, dtype=np.int64)
    return TransactionStream(
        np.arange(n, dtype=np.int64),
        np.asarray(card_ids if card_ids is not None else zeros, dtype=np.int64),
        np.asarray(times, dtype=np.int64),
        np.asarray(labels if labels is not None else zeros, dtype=np.int8),
        {"amount": np.asarray(amounts, dtype=np.float64),
         "country": np.asarray(countries if countries is not None else zeros, dtype=np.int64),
         "mcc": np.asarray(mccs if mccs is not None else zeros, dtype=np.int64),
         "terminal_type": np.asarray(terminals if terminals is not None else zeros, dtype=np.int64)},
        dict(MINI_SCHEMA),
    )


SMALL = GeneratorConfig(n_cards=600, fraud_txn_rate_target=0.01, fraud_card_rate=0.3, seed=3)


@pytest.fixture(scope="session")
def small_data():
    return generate(SMALL)


def gradcheck_instance(seed: int, bidirectional: bool = True):
    """A random small network and batch with a live ReLU head (H <= 8, l_s <= 5, batch <= 4)."""
    from fraudseq.nets import init_model
    from fraudseq.sequencing import Triplet

    rng = np.random.default_rng(seed)
    m_f = int(rng.integers(1, 3)) if bidirectional else 0
    m_p = int(rng.integers(0, 5 - m_f))
    model = init_model(Triplet(m_p, m_f), int(rng.integers(1, 4)), int(rng.integers(1, 9)),
                       int(rng.integers(2, 6)), bidirectional=bidirectional, seed=seed)
    # a dead ReLU layer zeroes every upstream gradient and makes the check vacuous
    model.params["head.b1"] = np.abs(model.params["head.b1"]) + 0.5
    batch = int(rng.integers(1, 5))
    X = rng.normal(size=(batch, model.triplet.length, model.input_dim))
    y = rng.integers(0, 2, size=batch)
    return model, X, y


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
