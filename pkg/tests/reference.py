"""Brute-force reference classifier for oracle-equivalence tests.

Recomputes single-feature scores, window scores, and the fused prediction
from the raw stored history with plain Python loops and no caching of any
kind. Projections go one vector at a time. Kept deliberately independent of
the incremental/vectorized paths in foodstream.classify.
"""
from __future__ import annotations

import math

import numpy as np

from foodstream.adapt import AdapterParams, forward
from foodstream.classify import WindowConfig


def _cos(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    return dot / (na * nb)


def _softmax(values):
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def naive_predict(
    history: list[tuple[np.ndarray, object]],
    adapter: AdapterParams | None,
    cfg: WindowConfig,
    query: np.ndarray,
    *,
    use_window: bool = True,
):
    """(predicted_label, final_scores_dict) recomputed from scratch.

    ``history`` is the raw (feature, label) list in arrival order; ``query``
    arrives at time t = len(history) + 1.
    """
    t = len(history) + 1
    if not history:
        return None, {}

    if adapter is None:
        proj = [np.asarray(f, dtype=float) for f, _ in history]
        q = np.asarray(query, dtype=float)
    else:
        proj = [forward(adapter, f) for f, _ in history]
        q = forward(adapter, query)

    classes = []
    for _, label in history:
        if label not in classes:
            classes.append(label)

    # per-class max single-feature cosine + most recent time attaining it
    class_max = {m: -math.inf for m in classes}
    best_time = {m: 0 for m in classes}
    for i, (z, (_, label)) in enumerate(zip(proj, history)):
        s = _cos(z, q)
        if s > class_max[label] or (s == class_max[label] and i + 1 > best_time[label]):
            class_max[label] = s
            best_time[label] = i + 1
    sb = dict(zip(classes, _softmax([class_max[m] for m in classes])))

    window_active = use_window and t >= cfg.t_min and len(history) >= cfg.k
    if window_active:
        k = cfg.k
        cands = []
        for start in range(0, len(history) - k + 1):
            concat = [x for z in proj[start : start + k] for x in z]
            cands.append((concat, history[start + k - 1][1]))
        query_window = [x for z in proj[len(history) - k + 1 :] for x in z] + list(q)
        class_w = {m: -math.inf for m in classes}
        sims = []
        for concat, label in cands:
            s = _cos(concat, query_window)
            sims.append(s)
            if s > class_w[label]:
                class_w[label] = s
        floor = min(sims)
        for m in classes:
            if class_w[m] == -math.inf:
                class_w[m] = floor
        sw = dict(zip(classes, _softmax([class_w[m] for m in classes])))
        final = {m: sb[m] * sw[m] ** cfg.alpha for m in classes}
    else:
        final = sb

    predicted = classes[0]
    for m in classes[1:]:
        if final[m] > final[predicted] or (
            final[m] == final[predicted] and best_time[m] > best_time[predicted]
        ):
            predicted = m
    return predicted, final
