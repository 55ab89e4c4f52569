"""Vector math primitives and the stream data model shared by every module.

All similarity math runs in 64-bit floats; the tolerances used throughout the
package and its tests assume this.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping

import numpy as np

Label = Hashable

# Norms below this floor are treated as degenerate zero vectors; dividing by
# them would overflow before a true ZeroDivisionError ever fired.
_NORM_FLOOR = 1e-150


class DataError(ValueError):
    """Malformed or degenerate input data (bad stream, zero feature, ...)."""


class NumericalError(ArithmeticError):
    """A numeric computation produced or received non-finite values."""


def as_feature(values: Iterable[float] | np.ndarray, dim: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-d float64 vector, optionally checking its dimension."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"feature must be a 1-d vector, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError("feature must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise DataError("feature contains non-finite entries")
    if dim is not None and arr.size != dim:
        raise DataError(f"feature has dimension {arr.size}, expected {dim}")
    return arr


def l2_normalize(v: Iterable[float] | np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm. Zero vectors are a data error."""
    arr = as_feature(v)
    norm = float(np.linalg.norm(arr))
    if norm < _NORM_FLOOR:
        raise DataError("cannot normalize a zero-norm feature")
    return arr / norm


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors of equal dimension.

    Symmetric and invariant to positive rescaling of either argument; the
    result is clipped into [-1, 1] to absorb last-ulp rounding.
    """
    va = as_feature(a)
    vb = as_feature(b)
    if va.size != vb.size:
        raise DataError(f"dimension mismatch: {va.size} vs {vb.size}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        raise DataError("cosine similarity of a zero-norm feature is undefined")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def softmax_values(raw: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-d score array (max-subtraction before exp)."""
    raw = np.asarray(raw, dtype=np.float64)
    shifted = raw - raw.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax(scores: Mapping[Label, float]) -> dict[Label, float]:
    """Softmax over a per-class score map; preserves argmax, sums to one."""
    if not scores:
        raise DataError("softmax of an empty score vector")
    labels = list(scores.keys())
    raw = np.asarray([scores[m] for m in labels], dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise DataError("softmax input contains non-finite entries")
    out = softmax_values(raw)
    return dict(zip(labels, out.tolist()))


@dataclass
class LabeledObservation:
    """One arrival in a consumption stream: (time step, feature, class label)."""

    time: int
    feature: np.ndarray
    label: Label

    def __post_init__(self) -> None:
        if self.time < 1:
            raise DataError(f"time steps start at 1, got {self.time}")
        self.feature = as_feature(self.feature)


@dataclass
class ConsumptionPattern:
    """One individual's time-ordered stream of labeled feature vectors."""

    pattern_id: str
    observations: list[LabeledObservation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def feature_dim(self) -> int:
        if not self.observations:
            raise DataError(f"pattern {self.pattern_id!r} is empty")
        return int(self.observations[0].feature.size)

    def labels(self) -> list[Label]:
        return [obs.label for obs in self.observations]

    def validate(self) -> None:
        """Check time stamps run 1..len consecutively and all dimensions agree."""
        if not self.observations:
            raise DataError(f"pattern {self.pattern_id!r} is empty")
        dim = self.observations[0].feature.size
        for i, obs in enumerate(self.observations):
            if obs.time != i + 1:
                raise DataError(
                    f"pattern {self.pattern_id!r}: time {obs.time} at position {i}, expected {i + 1}"
                )
            if obs.feature.size != dim:
                raise DataError(
                    f"pattern {self.pattern_id!r}: dimension {obs.feature.size} at t={obs.time}, expected {dim}"
                )
