import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foodstream.core import (
    ConsumptionPattern,
    DataError,
    LabeledObservation,
    cosine_similarity,
    l2_normalize,
    softmax,
)


def vectors(min_dim=2, max_dim=16):
    return st.lists(
        st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, width=64),
        min_size=min_dim,
        max_size=max_dim,
    ).filter(lambda v: math.sqrt(sum(x * x for x in v)) > 1e-6)


def paired_vectors():
    return st.integers(min_value=2, max_value=12).flatmap(
        lambda d: st.tuples(vectors(d, d), vectors(d, d))
    )


class TestCosineSimilarity:
    def test_identical(self):
        assert cosine_similarity([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_45_degrees(self):
        # oracle: dot = 1, norms sqrt(2) and 1
        expected = 1.0 / math.sqrt(2.0)
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(expected, abs=1e-9)

    def test_zero_vector_rejected(self):
        with pytest.raises(DataError):
            cosine_similarity([0, 0], [1, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            cosine_similarity([1, 0], [1, 0, 0])

    def test_nan_rejected(self):
        with pytest.raises(DataError):
            cosine_similarity([float("nan"), 1], [1, 0])

    @given(paired_vectors())
    def test_symmetry(self, pair):
        a, b = pair
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)

    @given(paired_vectors(), st.floats(min_value=1e-3, max_value=1e3))
    def test_positive_scale_invariance(self, pair, lam):
        a, b = pair
        scaled = [lam * x for x in a]
        assert cosine_similarity(scaled, b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)

    @given(vectors())
    def test_self_similarity(self, v):
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-9)

    @given(paired_vectors())
    def test_range(self, pair):
        a, b = pair
        assert -1.0 <= cosine_similarity(a, b) <= 1.0


class TestSoftmax:
    def test_symmetric_ties(self):
        out = softmax({"a": 0.0, "b": 0.0})
        assert out["a"] == pytest.approx(0.5, abs=1e-12)
        assert out["b"] == pytest.approx(0.5, abs=1e-12)

    def test_two_entry_values(self):
        # oracle: e^1/(e^1 + e^0) and e^0/(e^1 + e^0)
        e = math.e
        out = softmax({"a": 1.0, "b": 0.0})
        assert out["a"] == pytest.approx(e / (e + 1.0), abs=1e-5)
        assert out["b"] == pytest.approx(1.0 / (e + 1.0), abs=1e-5)

    def test_large_scores_no_overflow(self):
        out = softmax({"a": 100.0, "b": 0.0})
        assert out["a"] == pytest.approx(1.0, abs=1e-9)
        assert out["b"] == pytest.approx(0.0, abs=1e-9)
        assert all(math.isfinite(v) for v in out.values())

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            softmax({})

    @given(st.dictionaries(st.text(min_size=1, max_size=3),
                           st.floats(min_value=-15, max_value=15),
                           min_size=1, max_size=10))
    def test_sums_to_one_and_preserves_argmax(self, scores):
        out = softmax(scores)
        assert sum(out.values()) == pytest.approx(1.0, abs=1e-9)
        ranked = sorted(scores.values(), reverse=True)
        if len(ranked) > 1 and ranked[0] - ranked[1] > 1e-6:
            # argmax comparison is only meaningful above float noise
            assert max(scores, key=scores.get) == max(out, key=out.get)
        assert all(0.0 < v < 1.0 or len(out) == 1 for v in out.values())


class TestL2Normalize:
    def test_3_4_5(self):
        assert np.allclose(l2_normalize([3, 4]), [0.6, 0.8])

    def test_already_unit(self):
        assert np.allclose(l2_normalize([1, 0, 0]), [1, 0, 0])

    def test_diagonal(self):
        expected = 1.0 / math.sqrt(2.0)
        assert np.allclose(l2_normalize([2, 2]), [expected, expected], atol=1e-5)

    def test_zero_rejected(self):
        with pytest.raises(DataError):
            l2_normalize([0.0, 0.0])

    @given(vectors())
    def test_unit_norm_and_direction(self, v):
        out = l2_normalize(v)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-9)
        assert cosine_similarity(out, v) == pytest.approx(1.0, abs=1e-9)


class TestStreamTypes:
    def test_time_must_be_positive(self):
        with pytest.raises(DataError):
            LabeledObservation(time=0, feature=[1.0, 0.0], label="a")

    def test_pattern_validate_consecutive(self):
        obs = [
            LabeledObservation(time=1, feature=[1.0, 0.0], label="a"),
            LabeledObservation(time=3, feature=[0.0, 1.0], label="b"),
        ]
        with pytest.raises(DataError):
            ConsumptionPattern("p", obs).validate()

    def test_pattern_validate_dimension(self):
        obs = [
            LabeledObservation(time=1, feature=[1.0, 0.0], label="a"),
            LabeledObservation(time=2, feature=[0.0, 1.0, 0.0], label="b"),
        ]
        with pytest.raises(DataError):
            ConsumptionPattern("p", obs).validate()

    def test_pattern_ok(self):
        obs = [
            LabeledObservation(time=1, feature=[1.0, 0.0], label="a"),
            LabeledObservation(time=2, feature=[0.0, 1.0], label="b"),
        ]
        pattern = ConsumptionPattern("p", obs)
        pattern.validate()
        assert pattern.feature_dim == 2
        assert pattern.labels() == ["a", "b"]
