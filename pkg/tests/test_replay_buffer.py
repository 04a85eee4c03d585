import numpy as np
import pytest
from scipy import stats

from rldist.optimizers import BufferEmpty, ReplayBuffer


def test_fifo_eviction():
    buf = ReplayBuffer(capacity=5, seed=0)
    for item in range(1, 8):
        buf.insert(item)
    assert len(buf) == 5
    remaining = {buf._items[i] for i in range(5)}
    assert remaining == {3, 4, 5, 6, 7}  # items 1 and 2 evicted


def test_empty_sample_raises():
    buf = ReplayBuffer(capacity=4)
    with pytest.raises(BufferEmpty):
        buf.sample(1)


def test_new_items_get_max_priority():
    buf = ReplayBuffer(capacity=10)
    s0 = buf.insert("a")
    assert buf._priorities[s0] == 1.0
    buf.update_priorities([s0], [7.0])
    s1 = buf.insert("b")
    assert buf._priorities[s1] == 7.0


def test_alpha_zero_uniform():
    buf = ReplayBuffer(capacity=100, alpha=0.0, seed=3)
    for i in range(100):
        buf.insert(i, priority=float(i))  # wildly different priorities
    slots, _ = buf.sample(10_000)
    counts = np.bincount(slots, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.01


def test_high_priority_dominates():
    buf = ReplayBuffer(capacity=100, alpha=1.0, seed=4)
    hot = buf.insert("hot", priority=100.0)
    for i in range(99):
        buf.insert(i, priority=1e-9)
    slots, _ = buf.sample(2_000)
    assert (slots == hot).mean() > 0.95


@pytest.mark.parametrize("alpha", [0.0, 0.6, 1.0])
@pytest.mark.parametrize("profile_seed", range(5))
def test_sampling_matches_priority_power_law(alpha, profile_seed):
    """Empirical frequencies track (p + eps)^alpha normalization."""
    rng = np.random.default_rng(profile_seed)
    priorities = rng.uniform(0.1, 5.0, size=20)
    buf = ReplayBuffer(capacity=20, alpha=alpha, seed=100 + profile_seed)
    for i, p in enumerate(priorities):
        buf.insert(i, priority=float(p))
    slots, _ = buf.sample(10_000)
    counts = np.bincount(slots, minlength=20)
    expected = (priorities + buf.priority_eps) ** alpha
    expected = expected / expected.sum() * 10_000
    assert stats.chisquare(counts, expected).pvalue > 0.01


def test_update_priorities_changes_distribution():
    buf = ReplayBuffer(capacity=4, alpha=1.0, seed=5)
    slots = [buf.insert(i, priority=1.0) for i in range(4)]
    buf.update_priorities([slots[2]], [50.0])
    drawn, _ = buf.sample(4_000)
    assert (drawn == slots[2]).mean() > 0.8


def test_negative_priority_rejected():
    buf = ReplayBuffer(capacity=4)
    with pytest.raises(ValueError):
        buf.insert("x", priority=-1.0)
