"""Labeled feature history and training-batch construction.

Two samplers feed the adapter: uniform sampling over stored items, pairing
each draw with a jittered copy of itself, and class-balanced sampling that
pairs two distinct stored features of the same class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, Label, LabeledObservation, l2_normalize

SAMPLING_MODES = ("rs", "dil", "rs+dil")


@dataclass
class FeaturePair:
    """Two same-class views used as one training example."""

    first: np.ndarray
    second: np.ndarray
    label: Label


@dataclass
class BatchSpec:
    batch_size: int = 32
    mode: str = "rs"
    jitter_sigma: float = 0.05

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if self.mode not in SAMPLING_MODES:
            raise DataError(f"mode must be one of {SAMPLING_MODES}, got {self.mode!r}")
        if self.jitter_sigma < 0:
            raise DataError("jitter_sigma must be >= 0")


class ReplayBuffer:
    """Append-only store of the observations seen so far, indexed by class."""

    def __init__(self) -> None:
        self.items: list[LabeledObservation] = []
        self.index: dict[Label, list[int]] = {}
        self._matrix: np.ndarray | None = None
        self._matrix_len = 0

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labels_seen(self) -> list[Label]:
        """Distinct labels in first-appearance order."""
        return list(self.index.keys())

    def push(self, obs: LabeledObservation) -> None:
        expected = self.items[-1].time + 1 if self.items else 1
        if obs.time != expected:
            raise DataError(f"out-of-order push: time {obs.time}, expected {expected}")
        if self.items and obs.feature.size != self.items[0].feature.size:
            raise DataError("all buffered features must share one dimension")
        self.items.append(obs)
        self.index.setdefault(obs.label, []).append(len(self.items) - 1)

    def feature_matrix(self) -> np.ndarray:
        """Stacked (n, d) view of all stored features; cached between pushes."""
        n = len(self.items)
        if n == 0:
            raise DataError("buffer is empty")
        if self._matrix is None or self._matrix_len != n:
            self._matrix = np.stack([obs.feature for obs in self.items])
            self._matrix_len = n
        return self._matrix

    def times(self) -> np.ndarray:
        return np.asarray([obs.time for obs in self.items], dtype=np.int64)


def _jittered(feature: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return feature.copy()
    return l2_normalize(feature + rng.normal(0.0, sigma, size=feature.size))


def sample_rs(buffer: ReplayBuffer, spec: BatchSpec, rng: np.random.Generator) -> list[FeaturePair]:
    """Uniform draws (with replacement) over all items; each pairs with a jittered self."""
    n = len(buffer)
    if n == 0:
        raise DataError("cannot sample from an empty buffer")
    positions = rng.integers(0, n, size=spec.batch_size)
    pairs = []
    for pos in positions:
        obs = buffer.items[int(pos)]
        pairs.append(FeaturePair(obs.feature, _jittered(obs.feature, spec.jitter_sigma, rng), obs.label))
    return pairs


def sample_dil(buffer: ReplayBuffer, spec: BatchSpec, rng: np.random.Generator) -> list[FeaturePair]:
    """Class-uniform draws; each picks two distinct stored features of that class.

    A class with a single stored feature self-pairs with jitter, as in
    ``sample_rs``.
    """
    if len(buffer) == 0:
        raise DataError("cannot sample from an empty buffer")
    classes = buffer.labels_seen
    pairs = []
    for _ in range(spec.batch_size):
        label = classes[int(rng.integers(len(classes)))]
        positions = buffer.index[label]
        if len(positions) >= 2:
            i, j = rng.choice(len(positions), size=2, replace=False)
            first = buffer.items[positions[int(i)]].feature
            second = buffer.items[positions[int(j)]].feature
        else:
            first = buffer.items[positions[0]].feature
            second = _jittered(first, spec.jitter_sigma, rng)
        pairs.append(FeaturePair(first, second, label))
    return pairs


def sample_batch(buffer: ReplayBuffer, spec: BatchSpec, rng: np.random.Generator) -> list[FeaturePair]:
    """Dispatch on ``spec.mode``; the combined mode is resolved by the caller."""
    if spec.mode == "rs":
        return sample_rs(buffer, spec, rng)
    if spec.mode == "dil":
        return sample_dil(buffer, spec, rng)
    raise DataError(f"sample_batch needs a concrete mode, got {spec.mode!r}")
