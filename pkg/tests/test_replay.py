from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from foodstream.core import DataError, LabeledObservation
from foodstream.replay import BatchSpec, FeaturePair, ReplayBuffer, sample_dil, sample_rs


def fill(buffer, labels, rng=None):
    rng = rng or np.random.default_rng(0)
    for t, label in enumerate(labels, start=1):
        f = rng.normal(size=8)
        buffer.push(LabeledObservation(time=t, feature=f / np.linalg.norm(f), label=label))
    return buffer


class TestPush:
    def test_first_push(self):
        buf = ReplayBuffer()
        buf.push(LabeledObservation(time=1, feature=[1.0, 0.0], label="a"))
        assert len(buf) == 1

    def test_gap_rejected(self):
        buf = ReplayBuffer()
        buf.push(LabeledObservation(time=1, feature=[1.0, 0.0], label="a"))
        with pytest.raises(DataError):
            buf.push(LabeledObservation(time=3, feature=[0.0, 1.0], label="b"))

    def test_index_conservation(self):
        buf = fill(ReplayBuffer(), [f"c{i % 7}" for i in range(300)])
        assert sum(len(v) for v in buf.index.values()) == 300
        for label, positions in buf.index.items():
            for pos in positions:
                assert buf.items[pos].label == label

    def test_dimension_mismatch_rejected(self):
        buf = ReplayBuffer()
        buf.push(LabeledObservation(time=1, feature=[1.0, 0.0], label="a"))
        with pytest.raises(DataError):
            buf.push(LabeledObservation(time=2, feature=[1.0, 0.0, 0.0], label="a"))


class TestSampleRS:
    def test_single_item_buffer(self):
        buf = fill(ReplayBuffer(), ["a"])
        pairs = sample_rs(buf, BatchSpec(batch_size=4), np.random.default_rng(0))
        assert len(pairs) == 4
        assert all(p.label == "a" for p in pairs)
        assert all(np.array_equal(p.first, buf.items[0].feature) for p in pairs)

    def test_zero_jitter_duplicates(self):
        buf = fill(ReplayBuffer(), ["a", "b", "c"])
        pairs = sample_rs(buf, BatchSpec(batch_size=8, jitter_sigma=0.0), np.random.default_rng(1))
        for p in pairs:
            assert np.array_equal(p.first, p.second)

    def test_jittered_copy_is_unit_norm(self):
        buf = fill(ReplayBuffer(), ["a", "b"])
        pairs = sample_rs(buf, BatchSpec(batch_size=16, jitter_sigma=0.1), np.random.default_rng(2))
        for p in pairs:
            assert np.linalg.norm(p.second) == pytest.approx(1.0, abs=1e-9)

    def test_item_marginal_uniform(self):
        # simulation oracle: 10_000 draws over 200 items, expected 50 per item
        buf = fill(ReplayBuffer(), [f"c{i}" for i in range(200)])
        pairs = sample_rs(buf, BatchSpec(batch_size=10_000), np.random.default_rng(3))
        counts = Counter(p.label for p in pairs)
        observed = np.array([counts[f"c{i}"] for i in range(200)])
        assert stats.chisquare(observed).pvalue > 0.001
        assert abs(observed.mean() - 50.0) < 1e-9

    def test_empty_buffer_rejected(self):
        with pytest.raises(DataError):
            sample_rs(ReplayBuffer(), BatchSpec(), np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        buf = fill(ReplayBuffer(), ["a", "b", "c", "d"])
        one = sample_rs(buf, BatchSpec(batch_size=8), np.random.default_rng(9))
        two = sample_rs(buf, BatchSpec(batch_size=8), np.random.default_rng(9))
        for p, q in zip(one, two):
            assert p.label == q.label
            assert np.array_equal(p.second, q.second)


class TestSampleDIL:
    def test_forced_cross_pair(self):
        buf = fill(ReplayBuffer(), ["a", "a"])
        f1, f2 = buf.items[0].feature, buf.items[1].feature
        pairs = sample_dil(buf, BatchSpec(batch_size=12), np.random.default_rng(0))
        for p in pairs:
            assert p.label == "a"
            members = {p.first.tobytes(), p.second.tobytes()}
            assert members == {f1.tobytes(), f2.tobytes()}

    def test_singleton_self_pairs_without_jitter(self):
        buf = fill(ReplayBuffer(), ["a"])
        pairs = sample_dil(buf, BatchSpec(batch_size=5, jitter_sigma=0.0), np.random.default_rng(0))
        for p in pairs:
            assert np.array_equal(p.first, p.second)

    def test_class_marginal_uniform_despite_item_imbalance(self):
        # class a holds 100 items, class b one item; DIL still picks classes 50/50
        buf = fill(ReplayBuffer(), ["a"] * 100 + ["b"])
        pairs = sample_dil(buf, BatchSpec(batch_size=1000), np.random.default_rng(4))
        counts = Counter(p.label for p in pairs)
        assert abs(counts["a"] - 500) <= 50
        assert stats.chisquare([counts["a"], counts["b"]]).pvalue > 0.001

    def test_members_are_distinct_items_when_possible(self):
        buf = fill(ReplayBuffer(), ["a", "a", "a", "b", "b"])
        pairs = sample_dil(buf, BatchSpec(batch_size=64), np.random.default_rng(5))
        for p in pairs:
            assert not np.array_equal(p.first, p.second)


@given(
    st.lists(st.sampled_from("abc"), min_size=1, max_size=12),
    st.integers(min_value=0, max_value=2**31),
    st.sampled_from(["rs", "dil"]),
)
@settings(max_examples=150, deadline=None)
def test_pair_labels_always_match(labels, seed, mode):
    buf = fill(ReplayBuffer(), labels, rng=np.random.default_rng(seed))
    spec = BatchSpec(batch_size=6, mode=mode)
    sampler = sample_rs if mode == "rs" else sample_dil
    for pair in sampler(buf, spec, np.random.default_rng(seed)):
        assert pair.label in labels
        assert isinstance(pair, FeaturePair)


def test_batch_spec_validation():
    with pytest.raises(DataError):
        BatchSpec(batch_size=0)
    with pytest.raises(DataError):
        BatchSpec(mode="bogus")
    with pytest.raises(DataError):
        BatchSpec(jitter_sigma=-0.1)
