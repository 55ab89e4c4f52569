"""Simulated consumption-pattern benchmarks.

Each pattern starts from a short randomly drawn "habit" sequence, gets a
first-order Laplace-smoothed transition chain fitted to it, and is extended to
full length by sampling that chain, with a small per-step chance of pulling a
label from the global class pool so previously unseen classes keep appearing.
Features are synthesized per class from unit-sphere prototypes with Gaussian
sub-cluster structure, so within-class similarity exceeds between-class
similarity by a controllable margin.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    ConsumptionPattern,
    DataError,
    Label,
    LabeledObservation,
    l2_normalize,
)

_ROW_SUM_TOL = 1e-9


@dataclass
class TransitionModel:
    """First-order chain over class labels: row-stochastic matrix + initial law."""

    classes: tuple[Label, ...]
    matrix: np.ndarray
    initial: np.ndarray
    index: dict[Label, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        m = len(self.classes)
        if self.matrix.shape != (m, m):
            raise DataError(f"transition matrix shape {self.matrix.shape}, expected {(m, m)}")
        if self.initial.shape != (m,):
            raise DataError("initial distribution length must match class count")
        if np.any(self.matrix < 0) or np.any(self.initial < 0):
            raise DataError("transition probabilities must be nonnegative")
        rows = self.matrix.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > _ROW_SUM_TOL):
            raise DataError("transition matrix rows must sum to 1")
        if abs(float(self.initial.sum()) - 1.0) > _ROW_SUM_TOL:
            raise DataError("initial distribution must sum to 1")
        self.index = {c: i for i, c in enumerate(self.classes)}


@dataclass
class ClassModel:
    """Feature generator for one class: sub-cluster centers, weights, noise scale."""

    centers: np.ndarray         # (n_sub, d), unit rows
    weights: np.ndarray         # (n_sub,), sums to 1
    noise_sigma: float

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise DataError("each class needs at least one sub-cluster center")
        if self.weights.shape != (self.centers.shape[0],):
            raise DataError("cluster weights must match sub-cluster count")
        if abs(float(self.weights.sum()) - 1.0) > _ROW_SUM_TOL:
            raise DataError("cluster weights must sum to 1")
        if not self.noise_sigma > 0:
            raise DataError("noise_sigma must be positive")


@dataclass
class ClassFeatureModel:
    """Per-class feature generators sharing one embedding dimension."""

    classes: dict[Label, ClassModel]
    feature_dim: int


@dataclass(frozen=True)
class SimConfig:
    """Benchmark generator settings; identical configs generate identical bytes."""

    num_patterns: int = 20
    pattern_length: int = 300
    feature_dim: int = 64
    smoothing: float = 0.05
    seed: int = 0
    classes_per_pattern_target: int = 44
    sub_clusters_per_class: int = 3
    prototype_separation: float = 0.35    # min cosine gap: pairwise prototype cos <= 1 - this
    global_classes: int = 101
    preferred_classes: int = 18           # size of each pattern's initial habit pool
    new_class_rate: float = 0.02          # per-step chance of drawing from the global pool
    noise_sigma: float = 0.1
    sub_cluster_spread: float = 0.08
    prototype_density: float = 0.25       # fraction of active embedding coordinates per class
    confuser_rate: float = 0.0            # chance a sub-cluster leans toward another class
    confuser_weight: float = 0.5          # how far a confuser sub-cluster leans
    style_count: int = 6                  # size of the global preparation-style pool
    style_weight: float = 0.0             # sub-cluster mass carried by its style component
    style_block: int = 8                  # styles are constant over blocks of this many coords
    repeat_prob: float = 0.0              # chance a seed meal repeats the previous one (leftovers)
    sister_pairs: int = 0                 # look-alike class pairs exempt from the separation cap
    sister_cos: float = 0.985             # prototype cosine within a sister pair
    cluster_weight_alpha: float = 2.0     # Dirichlet concentration of sub-cluster usage
    seed_len_min: int = 15
    seed_len_max: int = 25

    def __post_init__(self) -> None:
        if self.pattern_length < 1:
            raise DataError("pattern_length must be >= 1")
        if self.feature_dim < 2:
            raise DataError("feature_dim must be >= 2")
        if self.smoothing < 0:
            raise DataError("smoothing must be >= 0")
        if self.num_patterns < 1:
            raise DataError("num_patterns must be >= 1")
        if not 0 <= self.new_class_rate <= 1:
            raise DataError("new_class_rate must lie in [0, 1]")
        if not 1 <= self.seed_len_min <= self.seed_len_max:
            raise DataError("seed length bounds must satisfy 1 <= min <= max")
        if not 0.0 <= self.style_weight < 1.0:
            raise DataError("style_weight must lie in [0, 1)")
        if self.style_weight > 0:
            if self.style_count < 1:
                raise DataError("style_weight needs style_count >= 1")
            if self.feature_dim % self.style_block != 0:
                raise DataError("feature_dim must be divisible by style_block")
        if self.sister_pairs * 2 > self.global_classes:
            raise DataError("not enough classes for the requested sister pairs")
        if not 0.0 < self.sister_cos < 1.0:
            raise DataError("sister_cos must lie in (0, 1)")


@dataclass
class Benchmark:
    """A generated benchmark plus the ground-truth class geometry behind it."""

    patterns: list[ConsumptionPattern]
    feature_dim: int
    classes: list[str]
    class_prototypes: dict[str, np.ndarray]
    config: SimConfig | None = None


def build_transition(seed_sequence: Sequence[Label], smoothing: float) -> TransitionModel:
    """Fit a Laplace-smoothed first-order chain to a short label sequence.

    Classes are ordered by first appearance. A class with no outgoing
    transitions and zero smoothing gets a uniform row (dead-end fallback).
    """
    if len(seed_sequence) < 2:
        raise DataError("seed sequence needs at least 2 labels to fit transitions")
    if smoothing < 0:
        raise DataError("smoothing must be >= 0")
    classes: list[Label] = []
    seen: set[Label] = set()
    for c in seed_sequence:
        if c not in seen:
            seen.add(c)
            classes.append(c)
    idx = {c: i for i, c in enumerate(classes)}
    m = len(classes)
    counts = np.zeros((m, m), dtype=np.float64)
    for a, b in zip(seed_sequence[:-1], seed_sequence[1:]):
        counts[idx[a], idx[b]] += 1.0
    counts += smoothing
    row_sums = counts.sum(axis=1)
    matrix = np.empty_like(counts)
    for i in range(m):
        if row_sums[i] > 0:
            matrix[i] = counts[i] / row_sums[i]
        else:
            matrix[i] = np.full(m, 1.0 / m)
    freq = np.zeros(m, dtype=np.float64)
    for c in seed_sequence:
        freq[idx[c]] += 1.0
    freq += smoothing
    initial = freq / freq.sum()
    return TransitionModel(tuple(classes), matrix, initial)


def simulate_labels(
    model: TransitionModel,
    length: int,
    rng: np.random.Generator,
    *,
    start: Label | None = None,
    class_pool: Sequence[Label] | None = None,
    new_class_rate: float = 0.0,
) -> list[Label]:
    """Sample a label sequence from the chain.

    The first label comes from the initial distribution unless ``start`` gives
    a conditioning predecessor. With a ``class_pool``, each step has
    ``new_class_rate`` probability of drawing uniformly from the pool instead
    of the chain; a current label unknown to the chain re-enters through the
    initial distribution.
    """
    if length < 1:
        raise DataError("length must be >= 1")
    if start is not None and start not in model.index and class_pool is None:
        raise DataError(f"start label {start!r} is not in the transition model")
    labels: list[Label] = []
    current = start
    m = len(model.classes)
    for _ in range(length):
        if class_pool is not None and new_class_rate > 0 and rng.random() < new_class_rate:
            nxt = class_pool[int(rng.integers(len(class_pool)))]
        elif current is None or current not in model.index:
            nxt = model.classes[int(rng.choice(m, p=model.initial))]
        else:
            row = model.matrix[model.index[current]]
            nxt = model.classes[int(rng.choice(m, p=row))]
        labels.append(nxt)
        current = nxt
    return labels


def synth_features(
    labels: Sequence[Label],
    model: ClassFeatureModel,
    rng: np.random.Generator,
    *,
    pattern_id: str = "pattern",
) -> ConsumptionPattern:
    """Emit one unit-norm feature per label: sub-cluster center + Gaussian noise."""
    observations: list[LabeledObservation] = []
    d = model.feature_dim
    for t, label in enumerate(labels, start=1):
        cm = model.classes.get(label)
        if cm is None:
            raise DataError(f"label {label!r} has no entry in the feature model")
        j = int(rng.choice(len(cm.weights), p=cm.weights))
        raw = cm.centers[j] + rng.normal(0.0, cm.noise_sigma, size=d)
        observations.append(LabeledObservation(time=t, feature=l2_normalize(raw), label=label))
    pattern = ConsumptionPattern(pattern_id=pattern_id, observations=observations)
    pattern.validate()
    return pattern


def _draw_separated_prototypes(
    count: int,
    dim: int,
    max_cosine: float,
    density: float,
    rng: np.random.Generator,
    max_tries: int = 50_000,
) -> np.ndarray:
    """Sparse nonnegative unit prototypes with capped pairwise cosine.

    Mimics pooled post-relu CNN embeddings: each class activates a small
    random subset of coordinates. Separation comes from limited support
    overlap, so the nonnegative cone still fits ~100 distinct classes.
    """
    active = max(2, int(round(density * dim)))
    protos = np.empty((count, dim))
    n = 0
    tries = 0
    while n < count:
        v = np.zeros(dim)
        idx = rng.choice(dim, size=active, replace=False)
        v[idx] = np.abs(rng.normal(size=active))
        v /= np.linalg.norm(v)
        if n == 0 or float(np.max(protos[:n] @ v)) <= max_cosine:
            protos[n] = v
            n += 1
        tries += 1
        if tries > max_tries:
            raise DataError(
                f"cannot place {count} prototypes with pairwise cosine <= {max_cosine} "
                f"in dimension {dim} at density {density}"
            )
    return protos


def _draw_styles(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Global pool of unit style vectors, each constant over its own coordinate block.

    Models preparation style and capture conditions as block-wise DC offsets
    on pooled embeddings: mutually orthogonal (disjoint blocks), heavy
    nuisance for plain cosine matching, and exactly the component a
    normalization layer removes.
    """
    blocks = config.feature_dim // config.style_block
    if config.style_count > blocks:
        raise DataError(
            f"style_count {config.style_count} exceeds the {blocks} available blocks "
            f"of {config.style_block} coordinates"
        )
    order = rng.permutation(blocks)
    styles = np.zeros((config.style_count, config.feature_dim))
    for s in range(config.style_count):
        b = int(order[s])
        styles[s, b * config.style_block : (b + 1) * config.style_block] = 1.0
        styles[s] /= np.linalg.norm(styles[s])
    return styles


def _build_world(
    config: SimConfig, rng: np.random.Generator
) -> tuple[list[str], np.ndarray, ClassFeatureModel, dict[int, int]]:
    """Draw the global class pool: separated prototypes + per-class sub-cluster models.

    Each sub-cluster composes its class prototype with one style from a
    global pool, so same-class items differ by style while different classes
    sharing a style look alike to plain cosine matching.
    """
    labels = [f"c{i:03d}" for i in range(config.global_classes)]
    max_cos = 1.0 - config.prototype_separation
    protos = _draw_separated_prototypes(
        config.global_classes, config.feature_dim, max_cos, config.prototype_density, rng
    )
    twins: dict[int, int] = {}
    if config.sister_pairs:
        # look-alike dishes: rewrite one class of each pair to sit at a fixed,
        # deliberately-high cosine to its twin, overriding the separation cap
        order = rng.permutation(config.global_classes)
        rho = config.sister_cos
        for k in range(config.sister_pairs):
            i, j = int(order[2 * k]), int(order[2 * k + 1])
            u = protos[i]
            w = protos[j] - (protos[j] @ u) * u
            wn = float(np.linalg.norm(w))
            if wn < 1e-9:
                continue
            protos[j] = rho * u + np.sqrt(1.0 - rho**2) * (w / wn)
            twins[i] = j
            twins[j] = i
    styles = _draw_styles(config, rng) if config.style_weight > 0 else None

    classes: dict[Label, ClassModel] = {}
    for i, label in enumerate(labels):
        n_sub = config.sub_clusters_per_class
        bases = np.tile(protos[i], (n_sub, 1))
        if styles is not None:
            picks = rng.integers(config.style_count, size=n_sub)
            beta = config.style_weight
            bases = np.sqrt(1.0 - beta**2) * bases + beta * styles[picks]
        if config.global_classes > 1:
            for j in range(n_sub):
                # A confuser sub-cluster leans toward another class's prototype:
                # dishes of one class that look like another. Single-feature
                # matching ties on these; habit structure resolves them.
                if rng.random() < config.confuser_rate:
                    other = int(rng.integers(config.global_classes - 1))
                    if other >= i:
                        other += 1
                    w = config.confuser_weight
                    bases[j] = (1.0 - w) * bases[j] + w * protos[other]
        # sub-clusters stay in the nonnegative cone: perturb, clip, renormalize
        centers = np.maximum(
            bases + rng.normal(0.0, config.sub_cluster_spread, size=(n_sub, config.feature_dim)),
            0.0,
        )
        norms = np.linalg.norm(centers, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise DataError("sub-cluster spread wiped out a prototype; lower sub_cluster_spread")
        centers /= norms
        weights = rng.dirichlet(np.full(n_sub, config.cluster_weight_alpha))
        classes[label] = ClassModel(centers=centers, weights=weights, noise_sigma=config.noise_sigma)
    return labels, protos, ClassFeatureModel(classes=classes, feature_dim=config.feature_dim), twins


def generate_benchmark(config: SimConfig) -> Benchmark:
    """Generate the full benchmark: patterns plus the ground-truth prototypes."""
    root = np.random.SeedSequence(config.seed)
    world_ss, patterns_ss = root.spawn(2)
    world_rng = np.random.default_rng(world_ss)
    labels, protos, feature_model, twins = _build_world(config, world_rng)
    pattern_ids = [f"p{i:02d}" for i in range(config.num_patterns)]
    patterns: list[ConsumptionPattern] = []
    for i, (pid, ss) in enumerate(zip(pattern_ids, patterns_ss.spawn(config.num_patterns))):
        rng = np.random.default_rng(ss)
        subset_idx = rng.choice(len(labels), size=min(config.preferred_classes, len(labels)), replace=False)
        chosen = set(int(j) for j in subset_idx)
        # households cook look-alike dishes together: a sister class pulls its
        # twin into the same habit pool
        for j in sorted(chosen):
            if j in twins:
                chosen.add(twins[j])
        subset = [labels[j] for j in sorted(chosen)]
        prefs = rng.dirichlet(np.ones(len(subset)))
        seed_len = int(rng.integers(config.seed_len_min, config.seed_len_max + 1))
        seed_len = min(seed_len, config.pattern_length)
        seed_labels: list[Label] = []
        while len(seed_labels) < seed_len:
            if seed_labels and rng.random() < config.repeat_prob:
                seed_labels.append(seed_labels[-1])  # leftovers: same dish again
            else:
                seed_labels.append(subset[int(rng.choice(len(subset), p=prefs))])
        if config.pattern_length > seed_len:
            chain = build_transition(seed_labels, config.smoothing)
            tail = simulate_labels(
                chain,
                config.pattern_length - seed_len,
                rng,
                start=seed_labels[-1],
                class_pool=labels,
                new_class_rate=config.new_class_rate,
            )
        else:
            tail = []
        patterns.append(synth_features(seed_labels + tail, feature_model, rng, pattern_id=pid))
    prototypes = {label: protos[i].copy() for i, label in enumerate(labels)}
    return Benchmark(
        patterns=patterns,
        feature_dim=config.feature_dim,
        classes=labels,
        class_prototypes=prototypes,
        config=config,
    )


def make_benchmark(config: SimConfig) -> list[ConsumptionPattern]:
    """Generate just the consumption patterns for ``config``."""
    return generate_benchmark(config).patterns


def food101_shape_config(seed: int = 0) -> SimConfig:
    """20 patterns x 300 steps, ~44 distinct classes each, 101-class pool.

    The non-default knobs were calibrated on held-out generator seeds so the
    benchmark reproduces the qualitative method ordering of streaming
    personalized classification: shared preparation styles confuse plain
    cosine matching, look-alike class pairs create ties that only habit
    structure resolves, and bursty repeats make recency informative.
    """
    return SimConfig(
        num_patterns=20,
        pattern_length=300,
        feature_dim=64,
        smoothing=0.05,
        seed=seed,
        classes_per_pattern_target=44,
        sub_clusters_per_class=7,
        global_classes=101,
        preferred_classes=18,
        new_class_rate=0.15,
        noise_sigma=0.02,
        sub_cluster_spread=0.005,
        style_count=5,
        style_weight=0.71,
        repeat_prob=0.4,
        sister_pairs=24,
        sister_cos=0.998,
    )


def vfn_shape_config(seed: int = 0) -> SimConfig:
    """26 patterns x 300 steps, ~29 distinct classes each, 74-class pool."""
    return SimConfig(
        num_patterns=26,
        pattern_length=300,
        feature_dim=64,
        smoothing=0.05,
        seed=seed,
        classes_per_pattern_target=29,
        sub_clusters_per_class=7,
        global_classes=74,
        preferred_classes=12,
        new_class_rate=0.07,
        noise_sigma=0.02,
        sub_cluster_spread=0.005,
        style_count=5,
        style_weight=0.71,
        repeat_prob=0.4,
        sister_pairs=16,
        sister_cos=0.998,
    )


SHAPE_CONFIGS = {
    "food101": food101_shape_config,
    "vfn": vfn_shape_config,
}


def manifest_path(benchmark_path: str | Path) -> Path:
    p = Path(benchmark_path)
    return p.with_name(p.stem + ".manifest.json")


def write_benchmark(benchmark: Benchmark, path: str | Path) -> Path:
    """Write observations as JSON Lines sorted by (pattern_id, t) plus a manifest."""
    p = Path(path)
    lines = []
    for pattern in sorted(benchmark.patterns, key=lambda q: q.pattern_id):
        for obs in pattern.observations:
            lines.append(
                json.dumps(
                    {
                        "pattern_id": pattern.pattern_id,
                        "t": obs.time,
                        "label": obs.label,
                        "feature": obs.feature.tolist(),
                    },
                    separators=(",", ":"),
                )
            )
    p.write_text("\n".join(lines) + "\n")
    manifest = {
        "format": "foodstream-benchmark",
        "version": 1,
        "feature_dim": benchmark.feature_dim,
        "classes": benchmark.classes,
        "class_prototypes": {m: v.tolist() for m, v in benchmark.class_prototypes.items()},
        "config": asdict(benchmark.config) if benchmark.config is not None else None,
    }
    manifest_path(p).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return p


def load_benchmark(path: str | Path) -> Benchmark:
    """Load a JSONL benchmark (and its manifest, when present) back into memory."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"benchmark file not found: {p}")
    grouped: dict[str, list[LabeledObservation]] = {}
    order: list[str] = []
    with p.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                obs = LabeledObservation(time=int(rec["t"]), feature=rec["feature"], label=rec["label"])
                pid = str(rec["pattern_id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{p}:{lineno}: bad benchmark record ({exc})") from exc
            if pid not in grouped:
                grouped[pid] = []
                order.append(pid)
            grouped[pid].append(obs)
    if not grouped:
        raise DataError(f"benchmark file {p} holds no observations")
    patterns = [ConsumptionPattern(pattern_id=pid, observations=grouped[pid]) for pid in order]
    for pattern in patterns:
        pattern.validate()
    dim = patterns[0].feature_dim
    for pattern in patterns:
        if pattern.feature_dim != dim:
            raise DataError("all patterns in a benchmark must share one feature dimension")

    classes: list[str] = []
    prototypes: dict[str, np.ndarray] = {}
    config = None
    mp = manifest_path(p)
    if mp.exists():
        manifest = json.loads(mp.read_text())
        classes = list(manifest.get("classes") or [])
        prototypes = {
            m: np.asarray(v, dtype=np.float64)
            for m, v in (manifest.get("class_prototypes") or {}).items()
        }
        raw_cfg = manifest.get("config")
        if raw_cfg:
            known = {f.name for f in SimConfig.__dataclass_fields__.values()}
            config = SimConfig(**{k: v for k, v in raw_cfg.items() if k in known})
    if not classes:
        seen: set[str] = set()
        for pattern in patterns:
            for obs in pattern.observations:
                if obs.label not in seen:
                    seen.add(obs.label)
                    classes.append(obs.label)
    return Benchmark(
        patterns=patterns,
        feature_dim=dim,
        classes=classes,
        class_prototypes=prototypes,
        config=config,
    )


def custom_config(base: SimConfig | None = None, **overrides) -> SimConfig:
    """A SimConfig from keyword overrides on top of ``base`` (or defaults)."""
    cfg = base if base is not None else SimConfig()
    known = {f.name for f in SimConfig.__dataclass_fields__.values()}
    unknown = set(overrides) - known
    if unknown:
        raise DataError(f"unknown SimConfig fields: {sorted(unknown)}")
    return replace(cfg, **overrides)
