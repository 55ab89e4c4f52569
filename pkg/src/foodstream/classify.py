"""Personalized streaming classifier.

Scores a query feature against the adapter-projected personal history two
ways: per-class maximum cosine of single features, and per-class maximum
cosine of sliding windows of k concatenated consecutive features. The two
softmaxed score vectors are fused as R_m = sb_m * sw_m**alpha and the argmax
over classes seen so far is the prediction.

Raw features are kept forever; every adapter update retroactively re-embeds
the whole history through a versioned projection cache, which is the one
piece of state the brute-force oracle in the tests deliberately avoids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .adapt import AdapterParams, OptimConfig, forward, forward_batch, init_adapter, loss_and_grads, sgd_step
from .core import DataError, Label, LabeledObservation, NumericalError, as_feature, softmax_values
from .replay import BatchSpec, ReplayBuffer, sample_batch, SAMPLING_MODES

_ZERO_NORM = 1e-30


@dataclass(frozen=True)
class WindowConfig:
    k: int = 5
    alpha: float = 0.0025
    t_min: int = 50

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DataError("window length k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if self.t_min < self.k:
            raise DataError("t_min must be >= k")


@dataclass
class Window:
    """k concatenated consecutive projected features, labeled by the last one."""

    concat: np.ndarray
    label: Label
    start: int


@dataclass
class PredictionRecord:
    t: int
    predicted: Label | None
    truth: Label | None
    scores: dict[Label, float]


@dataclass
class PersonalClassifierState:
    """History, adapter, and projection cache for one consumption pattern.

    ``adapter=None`` is the identity-passthrough ablation: stored and query
    features are used raw and no update schedule runs.
    """

    feature_dim: int
    adapter: AdapterParams | None
    optim: OptimConfig
    window_cfg: WindowConfig
    batch_spec: BatchSpec
    rng: np.random.Generator
    sampling: str = "none"
    use_window: bool = True
    warmup: int = 8
    buffer: ReplayBuffer = field(default_factory=ReplayBuffer)
    adapter_version: int = 0
    _codes: list[int] = field(default_factory=list, repr=False)
    _code_of: dict[Label, int] = field(default_factory=dict, repr=False)
    _label_of: list[Label] = field(default_factory=list, repr=False)
    _cache: np.ndarray | None = field(default=None, repr=False)
    _cache_version: int = field(default=-1, repr=False)
    _cache_len: int = field(default=0, repr=False)
    _update_count: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if self.sampling not in ("none",) + SAMPLING_MODES:
            raise DataError(f"sampling must be 'none' or one of {SAMPLING_MODES}")
        if self.sampling != "none" and self.adapter is None:
            raise DataError("adapter updates need an adapter; identity mode cannot train")
        if self.adapter is not None and self.adapter.dim != self.feature_dim:
            raise DataError("adapter dimension must match feature_dim")
        if self.warmup < 2:
            raise DataError("warmup must be >= 2 so batches always hold a usable pair")

    @property
    def dim(self) -> int:
        return self.feature_dim

    def num_classes(self) -> int:
        return len(self._label_of)


def make_classifier(
    dim: int,
    *,
    seed: int | np.random.Generator = 0,
    sampling: str = "none",
    loss: str = "simsiam",
    window_cfg: WindowConfig | None = None,
    optim: OptimConfig | None = None,
    batch_spec: BatchSpec | None = None,
    use_window: bool = True,
    warmup: int = 8,
    group_count: int = 8,
    adapter: AdapterParams | None | str = "auto",
) -> PersonalClassifierState:
    """Assemble a classifier state.

    ``adapter="auto"`` builds a trainable near-identity adapter when a
    sampling mode is set, and falls back to identity passthrough otherwise.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if adapter == "auto":
        adapter = init_adapter(dim, group_count=group_count, rng=rng) if sampling != "none" else None
    return PersonalClassifierState(
        feature_dim=dim,
        adapter=adapter,
        optim=optim if optim is not None else OptimConfig(loss=loss),
        window_cfg=window_cfg if window_cfg is not None else WindowConfig(),
        batch_spec=batch_spec if batch_spec is not None else BatchSpec(),
        rng=rng,
        sampling=sampling,
        use_window=use_window,
        warmup=warmup,
    )


def _refresh_cache(state: PersonalClassifierState) -> np.ndarray:
    n = len(state.buffer)
    if n == 0:
        raise DataError("empty history")
    if state.adapter is None:
        state._cache = state.buffer.feature_matrix()
        state._cache_len = n
        return state._cache
    if state._cache_version != state.adapter_version or state._cache is None:
        state._cache = forward_batch(state.adapter, state.buffer.feature_matrix())
        state._cache_version = state.adapter_version
        state._cache_len = n
    elif state._cache_len < n:
        fresh = forward_batch(state.adapter, state.buffer.feature_matrix()[state._cache_len :])
        state._cache = np.vstack([state._cache, fresh])
        state._cache_len = n
    return state._cache


def projected_history(state: PersonalClassifierState) -> np.ndarray:
    """The adapter-projected history, recomputed only when the adapter moved."""
    return _refresh_cache(state)


def project_query(state: PersonalClassifierState, f) -> np.ndarray:
    if state.adapter is None:
        return as_feature(f, dim=state.dim)
    return forward(state.adapter, as_feature(f, dim=state.dim))


def _raw_single_scores(
    state: PersonalClassifierState, q: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class max cosine of the projected query against projected history.

    Returns (class_max, best_time) where best_time[m] is the most recent time
    step attaining class m's maximum (the deterministic tie-break key).
    """
    cache = _refresh_cache(state)
    qn = float(np.linalg.norm(q))
    norms = np.linalg.norm(cache, axis=1)
    if qn < _ZERO_NORM or np.any(norms < _ZERO_NORM):
        raise NumericalError("zero-norm projected feature: adapter collapse")
    sims = (cache @ q) / (norms * qn)
    codes = np.asarray(state._codes, dtype=np.intp)
    m = state.num_classes()
    class_max = np.full(m, -np.inf)
    np.maximum.at(class_max, codes, sims)
    is_best = sims == class_max[codes]
    times = np.arange(1, len(sims) + 1)
    best_time = np.zeros(m, dtype=np.int64)
    np.maximum.at(best_time, codes[is_best], times[is_best])
    return class_max, best_time


def single_image_scores(state: PersonalClassifierState, f) -> dict[Label, float]:
    """Softmax over per-class maximum cosine between query and stored features."""
    if len(state.buffer) == 0:
        raise DataError("cannot score against an empty history")
    q = project_query(state, f)
    class_max, _ = _raw_single_scores(state, q)
    probs = softmax_values(class_max)
    return {state._label_of[i]: float(probs[i]) for i in range(len(probs))}


def build_windows(state: PersonalClassifierState) -> list[Window]:
    """All length-k windows over the projected history, in start order."""
    k = state.window_cfg.k
    n = len(state.buffer)
    if n < k:
        return []
    cache = _refresh_cache(state)
    mat = _window_matrix(cache, k)
    return [
        Window(concat=mat[i], label=state.buffer.items[i + k - 1].label, start=i + 1)
        for i in range(mat.shape[0])
    ]


def _window_matrix(cache: np.ndarray, k: int) -> np.ndarray:
    n, d = cache.shape
    if k == 1:
        return cache
    view = np.lib.stride_tricks.sliding_window_view(cache, k, axis=0)
    return np.swapaxes(view, 1, 2).reshape(n - k + 1, k * d)


def _raw_window_scores(state: PersonalClassifierState, q: np.ndarray) -> np.ndarray:
    """Per-class max cosine of the query window against every history window.

    Classes with no window carrying their label receive the minimum candidate
    score, a conservative floor that keeps softmax mass away from them.
    """
    k = state.window_cfg.k
    n = len(state.buffer)
    if n < k:
        raise DataError(f"window scoring needs at least k={k} stored features")
    cache = _refresh_cache(state)
    cands = _window_matrix(cache, k)
    wq = np.concatenate([cache[n - k + 1 :].ravel(), q])
    wq_norm = float(np.linalg.norm(wq))
    cand_norms = np.linalg.norm(cands, axis=1)
    if wq_norm < _ZERO_NORM or np.any(cand_norms < _ZERO_NORM):
        raise NumericalError("zero-norm window: adapter collapse")
    sims = (cands @ wq) / (cand_norms * wq_norm)
    codes = np.asarray(state._codes[k - 1 :], dtype=np.intp)
    m = state.num_classes()
    class_max = np.full(m, -np.inf)
    np.maximum.at(class_max, codes, sims)
    floor = float(sims.min())
    class_max[np.isneginf(class_max)] = floor
    return class_max


def window_scores(state: PersonalClassifierState, f) -> dict[Label, float]:
    """Softmax over per-class maximum window cosine for the query's window."""
    q = project_query(state, f)
    raw = _raw_window_scores(state, q)
    probs = softmax_values(raw)
    return {state._label_of[i]: float(probs[i]) for i in range(len(probs))}


def fuse(sb: Mapping[Label, float], sw: Mapping[Label, float], alpha: float) -> dict[Label, float]:
    """Combine score vectors as R_m = sb_m * sw_m**alpha; not renormalized."""
    if set(sb.keys()) != set(sw.keys()):
        raise DataError("fuse requires identical class keys on both score vectors")
    return {m: sb[m] * sw[m] ** alpha for m in sb}


def _argmax_recency(values: np.ndarray, best_time: np.ndarray) -> int:
    """Index of the largest value; exact ties go to the most recent best match."""
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best] or (values[i] == values[best] and best_time[i] > best_time[best]):
            best = i
    return best


def predict(state: PersonalClassifierState, f) -> PredictionRecord:
    """Score the incoming feature against everything seen so far.

    Before any history exists the prediction is None. The window term joins
    the fusion only once the stream has reached t_min and the history spans a
    full window.
    """
    t = len(state.buffer) + 1
    if len(state.buffer) == 0:
        return PredictionRecord(t=t, predicted=None, truth=None, scores={})
    q = project_query(state, f)
    class_max, best_time = _raw_single_scores(state, q)
    sb = softmax_values(class_max)
    use_window = (
        state.use_window and t >= state.window_cfg.t_min and len(state.buffer) >= state.window_cfg.k
    )
    if use_window:
        sw = softmax_values(_raw_window_scores(state, q))
        final = sb * sw**state.window_cfg.alpha
    else:
        final = sb
    idx = _argmax_recency(final, best_time)
    scores = {state._label_of[i]: float(final[i]) for i in range(len(final))}
    return PredictionRecord(t=t, predicted=state._label_of[idx], truth=None, scores=scores)


def observe(state: PersonalClassifierState, f, label: Label) -> None:
    """Reveal the true label for the newest feature, then run the update schedule.

    One optimizer step per arrival once the buffer holds ``warmup`` items; the
    combined sampling mode alternates between the two samplers batch by batch.
    The projection cache is brought up to the new adapter version before
    returning.
    """
    obs = LabeledObservation(time=len(state.buffer) + 1, feature=as_feature(f, dim=state.dim), label=label)
    state.buffer.push(obs)
    if label not in state._code_of:
        state._code_of[label] = len(state._label_of)
        state._label_of.append(label)
    state._codes.append(state._code_of[label])

    if state.sampling != "none" and len(state.buffer) >= state.warmup:
        mode = state.sampling
        if mode == "rs+dil":
            mode = "rs" if state._update_count % 2 == 0 else "dil"
        spec = BatchSpec(
            batch_size=state.batch_spec.batch_size,
            mode=mode,
            jitter_sigma=state.batch_spec.jitter_sigma,
        )
        batch = sample_batch(state.buffer, spec, state.rng)
        _, grads = loss_and_grads(state.adapter, batch, state.optim)
        state.adapter = sgd_step(state.adapter, grads, state.optim)
        state.adapter_version += 1
        state._update_count += 1
    _refresh_cache(state)
