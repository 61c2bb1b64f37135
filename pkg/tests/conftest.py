import numpy as np
import pytest

from eventformer.streams import EventSequence


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_seq(times, labels, horizon=10.0, m=3):
    return EventSequence(np.asarray(times, float), np.asarray(labels, np.int64), horizon, m)


def random_seq(rng, n=20, m=3, horizon=10.0):
    times = np.sort(rng.uniform(0, horizon, n))
    return EventSequence(times, rng.integers(0, m, n), horizon, m)
