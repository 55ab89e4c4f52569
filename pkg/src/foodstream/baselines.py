"""Comparison methods: frozen prototype-bank classifier, raw 1-NN, an online
one-vs-rest hinge learner, and two personal/generic score mixtures (the second
adds a recency-decayed frequency prior)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DataError, Label, as_feature, l2_normalize
from .replay import ReplayBuffer

_ZERO_NORM = 1e-30


@dataclass(frozen=True)
class SpcConfig:
    mix_weight: float = 0.7       # balance: personal nearest-neighbor vs bank prototype score
    decay_halflife: float = 20.0  # steps for the frequency prior to halve
    freq_weight: float = 0.5      # strength of the frequency prior

    def __post_init__(self) -> None:
        if not 0.0 <= self.mix_weight <= 1.0:
            raise DataError("mix_weight must lie in [0, 1]")
        if not self.decay_halflife > 0:
            raise DataError("decay_halflife must be positive")


@dataclass
class PrototypeBank:
    """Frozen unit-norm class prototypes standing in for a generic pretrained model."""

    labels: tuple[Label, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[0] != len(self.labels):
            raise DataError("bank matrix rows must match label count")
        norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DataError("bank prototypes must be unit-norm")
        self._row = {m: i for i, m in enumerate(self.labels)}

    def __contains__(self, label: Label) -> bool:
        return label in self._row

    def __len__(self) -> int:
        return len(self.labels)

    def cosines(self, f: np.ndarray) -> np.ndarray:
        q = as_feature(f)
        qn = float(np.linalg.norm(q))
        if qn < _ZERO_NORM:
            raise DataError("zero-norm query")
        return (self.matrix @ q) / qn

    def cosine_of(self, label: Label, f: np.ndarray) -> float | None:
        i = self._row.get(label)
        if i is None:
            return None
        return float(self.cosines(f)[i])


def build_prototype_bank(
    class_prototypes: Mapping[Label, np.ndarray],
    rng: np.random.Generator,
    subset_fraction: float = 0.7,
    noise_sigma: float = 0.15,
) -> PrototypeBank:
    """Corrupt the true class prototypes and keep a random subset of classes.

    Models an imperfect generic model: nontrivial but capped accuracy, and no
    coverage at all for the dropped classes.
    """
    if not class_prototypes:
        raise DataError("cannot build a bank without prototypes")
    labels = sorted(class_prototypes.keys(), key=str)
    keep = max(1, int(round(subset_fraction * len(labels))))
    chosen_idx = sorted(rng.choice(len(labels), size=keep, replace=False).tolist())
    chosen = [labels[i] for i in chosen_idx]
    rows = []
    for m in chosen:
        proto = as_feature(class_prototypes[m])
        rows.append(l2_normalize(proto + rng.normal(0.0, noise_sigma, size=proto.size)))
    return PrototypeBank(labels=tuple(chosen), matrix=np.stack(rows))


def static_predict(bank: PrototypeBank, f) -> Label:
    """Frozen classifier: argmax cosine over the bank only; never learns."""
    if len(bank) == 0:
        raise DataError("bank is empty")
    sims = bank.cosines(as_feature(f))
    return bank.labels[int(np.argmax(sims))]


def _personal_scores(
    features: np.ndarray, codes: np.ndarray, times: np.ndarray, num_classes: int, f: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class max cosine over stored features plus last-occurrence times."""
    qn = float(np.linalg.norm(f))
    norms = np.linalg.norm(features, axis=1)
    if qn < _ZERO_NORM or np.any(norms < _ZERO_NORM):
        raise DataError("zero-norm feature in nearest-neighbor scoring")
    sims = (features @ f) / (norms * qn)
    class_max = np.full(num_classes, -np.inf)
    np.maximum.at(class_max, codes, sims)
    last_time = np.zeros(num_classes, dtype=np.int64)
    np.maximum.at(last_time, codes, times)
    return class_max, last_time


def _codes_for(buffer: ReplayBuffer) -> tuple[list[Label], np.ndarray]:
    labels = buffer.labels_seen
    code = {m: i for i, m in enumerate(labels)}
    return labels, np.asarray([code[obs.label] for obs in buffer.items], dtype=np.intp)


def one_nn_predict(history: ReplayBuffer, f) -> Label | None:
    """Label of the stored feature most similar to ``f`` (raw features, ties to the newest)."""
    if len(history) == 0:
        return None
    q = as_feature(f)
    feats = history.feature_matrix()
    qn = float(np.linalg.norm(q))
    norms = np.linalg.norm(feats, axis=1)
    if qn < _ZERO_NORM or np.any(norms < _ZERO_NORM):
        raise DataError("zero-norm feature in nearest-neighbor scoring")
    sims = (feats @ q) / (norms * qn)
    best = len(sims) - 1 - int(np.argmax(sims[::-1]))
    return history.items[best].label


def _argmax_label(
    labels: Sequence[Label], scores: np.ndarray, last_time: np.ndarray
) -> Label:
    best = 0
    for i in range(1, len(labels)):
        if scores[i] > scores[best] or (scores[i] == scores[best] and last_time[i] > last_time[best]):
            best = i
    return labels[best]


def _mixed_scores(
    labels: Sequence[Label],
    personal_max: np.ndarray,
    bank: PrototypeBank,
    cfg: SpcConfig,
    f: np.ndarray,
    bank_matrix: np.ndarray | None = None,
) -> np.ndarray:
    """mix * personal-NN score + (1 - mix) * bank score.

    A class without a bank prototype keeps its personal score in the generic
    slot (no evidence, no penalty); a class never seen personally contributes
    -1 on the personal side, though prediction is restricted to seen classes
    anyway.
    """
    q = as_feature(f)
    qn = float(np.linalg.norm(q))
    matrix = bank.matrix if bank_matrix is None else bank_matrix
    bank_norms = np.linalg.norm(matrix, axis=1)
    if qn < _ZERO_NORM or np.any(bank_norms < _ZERO_NORM):
        raise DataError("zero-norm feature in bank scoring")
    bank_sims = (matrix @ q) / (bank_norms * qn)
    out = np.empty(len(labels))
    for i, m in enumerate(labels):
        personal = personal_max[i] if np.isfinite(personal_max[i]) else -1.0
        j = bank._row.get(m)
        generic = float(bank_sims[j]) if j is not None else personal
        out[i] = cfg.mix_weight * personal + (1.0 - cfg.mix_weight) * generic
    return out


def spc_predict(history: ReplayBuffer, bank: PrototypeBank, cfg: SpcConfig, f) -> Label:
    """Personal/generic mixture over classes seen so far; pure bank argmax before any history."""
    q = as_feature(f)
    if len(history) == 0:
        return static_predict(bank, q)
    labels, codes = _codes_for(history)
    personal, last_time = _personal_scores(history.feature_matrix(), codes, history.times(), len(labels), q)
    scores = _mixed_scores(labels, personal, bank, cfg, q)
    return _argmax_label(labels, scores, last_time)


def recency_freq(labels: Sequence[Label], times: Sequence[int], t: int, halflife: float) -> dict[Label, float]:
    """Exponentially decayed occurrence counts at step ``t``, normalized over classes."""
    if halflife <= 0:
        raise DataError("halflife must be positive")
    weights: dict[Label, float] = {}
    for m, tau in zip(labels, times):
        weights[m] = weights.get(m, 0.0) + 0.5 ** ((t - tau) / halflife)
    total = sum(weights.values())
    if total <= 0:
        return {m: 0.0 for m in weights}
    return {m: w / total for m, w in weights.items()}


def spc_pp_predict(
    history: ReplayBuffer, bank: PrototypeBank, cfg: SpcConfig, f, t: int
) -> Label:
    """The mixture score boosted by (1 + freq_weight * recency_freq) per class."""
    q = as_feature(f)
    if len(history) == 0:
        return static_predict(bank, q)
    labels, codes = _codes_for(history)
    personal, last_time = _personal_scores(history.feature_matrix(), codes, history.times(), len(labels), q)
    scores = _mixed_scores(labels, personal, bank, cfg, q)
    freq = recency_freq([obs.label for obs in history.items], [obs.time for obs in history.items], t, cfg.decay_halflife)
    boosted = np.array([scores[i] * (1.0 + cfg.freq_weight * freq.get(m, 0.0)) for i, m in enumerate(labels)])
    return _argmax_label(labels, boosted, last_time)


@dataclass
class OnlineLinearModel:
    """One-vs-rest hinge learner updated once per arrival; classes grow as seen."""

    dim: int
    learning_rate: float = 0.1
    margin: float = 1.0
    classes: list[Label] = field(default_factory=list)
    weights: dict[Label, np.ndarray] = field(default_factory=dict)

    def scores(self, f: np.ndarray) -> np.ndarray:
        return np.asarray([float(self.weights[m] @ f) for m in self.classes])

    def predict(self, f) -> Label | None:
        if not self.classes:
            return None
        q = as_feature(f, dim=self.dim)
        return self.classes[int(np.argmax(self.scores(q)))]


def online_linear_step(model: OnlineLinearModel, f, truth: Label) -> tuple[Label | None, OnlineLinearModel]:
    """Predict, then apply hinge updates for the truth and the worst violating wrong class."""
    q = as_feature(f, dim=model.dim)
    prediction = model.predict(q)
    if truth not in model.weights:
        model.weights[truth] = np.zeros(model.dim)
        model.classes.append(truth)
    lr = model.learning_rate
    if float(model.weights[truth] @ q) < model.margin:
        model.weights[truth] = model.weights[truth] + lr * q
    others = [m for m in model.classes if m != truth]
    if others:
        scores = [float(model.weights[m] @ q) for m in others]
        top = others[int(np.argmax(scores))]
        if float(model.weights[top] @ q) > -model.margin:
            model.weights[top] = model.weights[top] - lr * q
    return prediction, model
