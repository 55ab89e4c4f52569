"""Sequential evaluation protocol, method registry, and report generation.

Every method is driven the same way through each pattern: predict on the new
feature first, record correctness, only then reveal the label and update. The
truth is structurally unreachable before the prediction is recorded. Each
(method, pattern) run owns all of its mutable state and draws randomness from
a stream hashed out of (global seed, method name, pattern id), so runs can
execute concurrently and still assemble into byte-identical reports.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import baselines, classify
from .adapt import OptimConfig
from .core import ConsumptionPattern, DataError, Label, l2_normalize
from .classify import BatchSpec, PersonalClassifierState, WindowConfig, make_classifier
from .replay import ReplayBuffer
from .core import LabeledObservation

DEFAULT_CHECKPOINTS = (75, 150, 225, 300)

KINDS = ("ours", "spcpp", "spc", "one_nn", "svmil", "static")

COMPARISON_METHODS = ("static", "svmil", "1nn", "spc", "spc++", "ours-simsiam", "ours-barlow")
ABLATION_ROWS = ("rs+spc++", "dil+spc++", "rs+dil+spc++", "rs+sw", "dil+sw", "rs+dil+sw")


@dataclass
class MethodSpec:
    """One benchmark row: classifier kind plus sampling/window/loss switches."""

    name: str
    kind: str
    sampling: str = "none"
    window: bool = False
    loss: str = "none"
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown classifier kind {self.kind!r}")

    def needs_bank(self) -> bool:
        return self.kind in ("static", "spc", "spcpp")


def parse_method(token: str, backbone: str = "simsiam") -> MethodSpec:
    """Turn a CLI method token into a MethodSpec.

    Ablation tokens may carry an explicit backbone suffix, e.g. "rs+sw:barlow".
    """
    raw = token.strip().lower()
    if ":" in raw:
        raw, backbone = raw.split(":", 1)
    if backbone not in ("simsiam", "barlow"):
        raise DataError(f"unknown backbone {backbone!r}")
    if raw == "static":
        return MethodSpec(name=token, kind="static")
    if raw == "svmil":
        return MethodSpec(name=token, kind="svmil")
    if raw in ("1nn", "1-nn"):
        return MethodSpec(name=token, kind="one_nn")
    if raw == "spc":
        return MethodSpec(name=token, kind="spc")
    if raw == "spc++":
        return MethodSpec(name=token, kind="spcpp")
    if raw in ("ours-simsiam", "ours-barlow"):
        return MethodSpec(name=token, kind="ours", sampling="rs+dil", window=True, loss=raw.split("-", 1)[1])
    if "+" in raw:
        parts = raw.split("+")
        tail = parts[-1]
        sampling_parts = parts[:-1]
        if tail == "sw":
            kind, window = "ours", True
        elif raw.endswith("spc++"):
            # "rs+dil+spc++" splits into [... , "spc", "++"]; recover the tail.
            kind, window = "spcpp", False
            sampling_parts = raw[: -len("+spc++")].split("+")
        else:
            raise DataError(f"unknown method token {token!r}")
        if not sampling_parts or any(p not in ("rs", "dil") for p in sampling_parts):
            raise DataError(f"unknown method token {token!r}")
        sampling = "+".join(sorted(set(sampling_parts), reverse=True))  # rs before dil
        if sampling not in ("rs", "dil", "rs+dil"):
            raise DataError(f"unknown sampling in {token!r}")
        return MethodSpec(name=token, kind=kind, sampling=sampling, window=window, loss=backbone)
    raise DataError(f"unknown method token {token!r}")


@dataclass
class MetricSeries:
    """Cumulative accuracy for one (method, pattern) run."""

    pattern_id: str
    values: np.ndarray
    checkpoints: dict[int, float]
    method: str = ""


@dataclass
class ReportRow:
    method: str
    cells: dict[int, tuple[float, float]]  # checkpoint -> (mean, std)


@dataclass
class BenchmarkResult:
    rows: list[ReportRow]
    series: list[MetricSeries]


class SequentialMethod(Protocol):
    def predict(self, feature: np.ndarray) -> Label | None: ...

    def update(self, feature: np.ndarray, label: Label) -> None: ...


class _OursRunner:
    def __init__(self, state: PersonalClassifierState):
        self.state = state

    def predict(self, feature):
        return classify.predict(self.state, feature).predicted

    def update(self, feature, label):
        classify.observe(self.state, feature, label)


class _RawSpcRunner:
    def __init__(self, bank: baselines.PrototypeBank, cfg: baselines.SpcConfig, plus_plus: bool):
        self.buffer = ReplayBuffer()
        self.bank = bank
        self.cfg = cfg
        self.plus_plus = plus_plus

    def predict(self, feature):
        t = len(self.buffer) + 1
        if self.plus_plus:
            return baselines.spc_pp_predict(self.buffer, self.bank, self.cfg, feature, t)
        return baselines.spc_predict(self.buffer, self.bank, self.cfg, feature)

    def update(self, feature, label):
        self.buffer.push(LabeledObservation(time=len(self.buffer) + 1, feature=feature, label=label))


class _AdaptedSpcRunner:
    """SPC/SPC++ scoring over adapter-projected vectors: history, query, and bank alike."""

    def __init__(
        self,
        state: PersonalClassifierState,
        bank: baselines.PrototypeBank,
        cfg: baselines.SpcConfig,
        plus_plus: bool,
    ):
        self.state = state
        self.bank = bank
        self.cfg = cfg
        self.plus_plus = plus_plus
        self._bank_proj: np.ndarray | None = None
        self._bank_version = -1

    def _projected_bank(self) -> np.ndarray:
        if self._bank_version != self.state.adapter_version or self._bank_proj is None:
            from .adapt import forward_batch

            self._bank_proj = forward_batch(self.state.adapter, self.bank.matrix)
            self._bank_version = self.state.adapter_version
        return self._bank_proj

    def predict(self, feature):
        state = self.state
        q = classify.project_query(state, feature)
        bank_proj = self._projected_bank()
        if len(state.buffer) == 0:
            sims = (bank_proj @ q) / (np.linalg.norm(bank_proj, axis=1) * np.linalg.norm(q))
            return self.bank.labels[int(np.argmax(sims))]
        cache = classify.projected_history(state)
        labels = state._label_of
        codes = np.asarray(state._codes, dtype=np.intp)
        personal, last_time = baselines._personal_scores(
            cache, codes, state.buffer.times(), len(labels), q
        )
        scores = baselines._mixed_scores(labels, personal, self.bank, self.cfg, q, bank_matrix=bank_proj)
        if self.plus_plus:
            t = len(state.buffer) + 1
            freq = baselines.recency_freq(
                [obs.label for obs in state.buffer.items],
                [obs.time for obs in state.buffer.items],
                t,
                self.cfg.decay_halflife,
            )
            scores = np.array(
                [scores[i] * (1.0 + self.cfg.freq_weight * freq.get(m, 0.0)) for i, m in enumerate(labels)]
            )
        return baselines._argmax_label(labels, scores, last_time)

    def update(self, feature, label):
        classify.observe(self.state, feature, label)


class _OneNNRunner:
    def __init__(self):
        self.buffer = ReplayBuffer()

    def predict(self, feature):
        return baselines.one_nn_predict(self.buffer, feature)

    def update(self, feature, label):
        self.buffer.push(LabeledObservation(time=len(self.buffer) + 1, feature=feature, label=label))


class _SvmilRunner:
    def __init__(self, dim: int, learning_rate: float, margin: float):
        self.model = baselines.OnlineLinearModel(dim=dim, learning_rate=learning_rate, margin=margin)

    def predict(self, feature):
        return self.model.predict(feature)

    def update(self, feature, label):
        _, self.model = baselines.online_linear_step(self.model, feature, label)


class _StaticRunner:
    def __init__(self, bank: baselines.PrototypeBank):
        self.bank = bank

    def predict(self, feature):
        return baselines.static_predict(self.bank, feature)

    def update(self, feature, label):
        pass


def _spc_config(params: Mapping[str, float]) -> baselines.SpcConfig:
    return baselines.SpcConfig(
        mix_weight=float(params.get("mix_weight", baselines.SpcConfig.mix_weight)),
        decay_halflife=float(params.get("decay_halflife", baselines.SpcConfig.decay_halflife)),
        freq_weight=float(params.get("freq_weight", baselines.SpcConfig.freq_weight)),
    )


def _classifier_state(spec: MethodSpec, dim: int, rng: np.random.Generator, use_window: bool) -> PersonalClassifierState:
    p = spec.params
    window_cfg = WindowConfig(
        k=int(p.get("k", WindowConfig.k)),
        alpha=float(p.get("alpha", WindowConfig.alpha)),
        t_min=int(p.get("t_min", WindowConfig.t_min)),
    )
    optim = OptimConfig(
        learning_rate=float(p.get("learning_rate", OptimConfig.learning_rate)),
        weight_decay=float(p.get("weight_decay", OptimConfig.weight_decay)),
        loss=spec.loss if spec.loss != "none" else "simsiam",
        barlow_lambda=float(p.get("barlow_lambda", OptimConfig.barlow_lambda)),
    )
    batch_spec = BatchSpec(
        batch_size=int(p.get("batch_size", BatchSpec.batch_size)),
        mode=spec.sampling if spec.sampling != "none" else "rs",
        jitter_sigma=float(p.get("jitter_sigma", BatchSpec.jitter_sigma)),
    )
    return make_classifier(
        dim,
        seed=rng,
        sampling=spec.sampling,
        window_cfg=window_cfg,
        optim=optim,
        batch_spec=batch_spec,
        use_window=use_window,
        warmup=int(p.get("warmup", 8)),
    )


def build_runner(
    spec: MethodSpec,
    dim: int,
    rng: np.random.Generator,
    bank: baselines.PrototypeBank | None = None,
) -> SequentialMethod:
    if spec.needs_bank() and bank is None:
        raise DataError(f"method {spec.name!r} needs a prototype bank")
    if spec.kind == "ours":
        return _OursRunner(_classifier_state(spec, dim, rng, use_window=spec.window))
    if spec.kind == "static":
        return _StaticRunner(bank)
    if spec.kind == "one_nn":
        return _OneNNRunner()
    if spec.kind == "svmil":
        return _SvmilRunner(
            dim,
            learning_rate=float(spec.params.get("svm_learning_rate", 0.1)),
            margin=float(spec.params.get("svm_margin", 1.0)),
        )
    cfg = _spc_config(spec.params)
    plus_plus = spec.kind == "spcpp"
    if spec.sampling == "none":
        return _RawSpcRunner(bank, cfg, plus_plus)
    return _AdaptedSpcRunner(_classifier_state(spec, dim, rng, use_window=False), bank, cfg, plus_plus)


def run_stream(runner: SequentialMethod, pattern: ConsumptionPattern) -> np.ndarray:
    """Drive one pattern through the predict-then-reveal protocol; 1.0 marks a hit."""
    correct = np.zeros(len(pattern), dtype=np.float64)
    for obs in pattern.observations:
        prediction = runner.predict(obs.feature)
        correct[obs.time - 1] = 1.0 if prediction == obs.label else 0.0
        runner.update(obs.feature, obs.label)
    return correct


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def run_pattern(
    method: MethodSpec,
    pattern: ConsumptionPattern,
    seed: int,
    *,
    bank: baselines.PrototypeBank | None = None,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
) -> MetricSeries:
    """Evaluate one method on one pattern; deterministic given ``seed``."""
    pattern.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    runner = build_runner(method, pattern.feature_dim, rng, bank)
    correct = run_stream(runner, pattern)
    values = np.cumsum(correct) / np.arange(1, len(correct) + 1)
    cps = {int(cp): float(values[cp - 1]) for cp in checkpoints if 1 <= cp <= len(values)}
    return MetricSeries(pattern_id=pattern.pattern_id, values=values, checkpoints=cps, method=method.name)


@dataclass
class PredictionLog:
    """Prediction records in protocol order, for metric computation."""

    records: list


def cumulative_accuracy(predictions: Sequence, t: int) -> float:
    """Fraction of the first ``t`` predictions matching their truth; None counts as a miss."""
    if t < 1 or t > len(predictions):
        raise DataError(f"t={t} out of range for {len(predictions)} predictions")
    hits = 0
    for rec in predictions[:t]:
        if rec.predicted is not None and rec.predicted == rec.truth:
            hits += 1
    return hits / t


def fallback_prototypes(patterns: Sequence[ConsumptionPattern]) -> dict[Label, np.ndarray]:
    """Per-class mean features across the whole benchmark, for banks on ingested data
    whose manifest carries no ground-truth prototypes."""
    sums: dict[Label, np.ndarray] = {}
    counts: dict[Label, int] = {}
    for pattern in patterns:
        for obs in pattern.observations:
            if obs.label not in sums:
                sums[obs.label] = np.zeros(obs.feature.size)
                counts[obs.label] = 0
            sums[obs.label] += obs.feature
            counts[obs.label] += 1
    return {m: l2_normalize(sums[m] / counts[m]) for m in sums}


def run_benchmark_full(
    methods: Sequence[MethodSpec],
    patterns: Sequence[ConsumptionPattern],
    seed: int,
    *,
    class_prototypes: Mapping[Label, np.ndarray] | None = None,
    checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS,
    workers: int = 1,
    bank_subset_fraction: float = 0.7,
    bank_noise_sigma: float = 0.02,
) -> BenchmarkResult:
    """Run every (method, pattern) pair and aggregate mean +- std at the checkpoints."""
    if not methods or not patterns:
        raise DataError("run_benchmark needs at least one method and one pattern")
    patterns = sorted(patterns, key=lambda p: p.pattern_id)
    bank = None
    if any(m.needs_bank() for m in methods):
        protos = class_prototypes
        if not protos:
            protos = fallback_prototypes(patterns)
        bank_rng = np.random.default_rng(np.random.SeedSequence(_derive_seed(seed, "prototype-bank")))
        bank = baselines.build_prototype_bank(
            protos, bank_rng, subset_fraction=bank_subset_fraction, noise_sigma=bank_noise_sigma
        )

    jobs = [(m, p) for m in methods for p in patterns]

    def _one(job):
        method, pattern = job
        return run_pattern(
            method,
            pattern,
            _derive_seed(seed, method.name, pattern.pattern_id),
            bank=bank,
            checkpoints=checkpoints,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            series = list(pool.map(_one, jobs))
    else:
        series = [_one(job) for job in jobs]

    rows = []
    for method in methods:
        own = [s for s in series if s.method == method.name]
        cells = {}
        for cp in checkpoints:
            vals = [s.checkpoints[cp] for s in own if cp in s.checkpoints]
            if vals:
                arr = np.asarray(vals)
                cells[int(cp)] = (float(arr.mean()), float(arr.std()))
        rows.append(ReportRow(method=method.name, cells=cells))
    return BenchmarkResult(rows=rows, series=series)


def run_benchmark(
    methods: Sequence[MethodSpec],
    patterns: Sequence[ConsumptionPattern],
    seed: int,
    **kwargs,
) -> list[ReportRow]:
    return run_benchmark_full(methods, patterns, seed, **kwargs).rows


def _columns(rows: Sequence[ReportRow]) -> list[int]:
    cps: set[int] = set()
    for row in rows:
        cps.update(row.cells.keys())
    return sorted(cps)


def render_table(rows: Sequence[ReportRow]) -> str:
    """Plain-text summary table, accuracies as percentages."""
    cps = _columns(rows)
    width = max([len(r.method) for r in rows] + [6])
    header = "method".ljust(width) + "".join(f"  t_{cp}".ljust(14) for cp in cps)
    lines = [header]
    for row in rows:
        cells = []
        for cp in cps:
            if cp in row.cells:
                mean, std = row.cells[cp]
                cells.append(f"  {100 * mean:5.1f} ± {100 * std:4.1f} ")
            else:
                cells.append("      —      ")
        lines.append(row.method.ljust(width) + "".join(cells))
    return "\n".join(lines)


def series_path(report_path: str | Path) -> Path:
    p = Path(report_path)
    return p.with_name(p.stem + ".series.csv")


def export_report(
    rows: Sequence[ReportRow],
    format: str,
    path: str | Path,
    series: Sequence[MetricSeries] | None = None,
) -> Path:
    """Write the summary report as CSV or JSON; optionally a per-step series sidecar."""
    if not rows:
        raise DataError("cannot export an empty report")
    p = Path(path)
    cps = _columns(rows)
    if format == "csv":
        lines = ["method," + ",".join(f"t{cp}_mean,t{cp}_std" for cp in cps)]
        for row in rows:
            cells = []
            for cp in cps:
                mean, std = row.cells.get(cp, (float("nan"), float("nan")))
                cells.append(f"{mean!r},{std!r}")
            lines.append(f"{row.method}," + ",".join(cells))
        p.write_text("\n".join(lines) + "\n")
    elif format == "json":
        payload = {
            "checkpoints": cps,
            "rows": [
                {
                    "method": row.method,
                    **{
                        f"t{cp}_{stat}": val
                        for cp in cps
                        if cp in row.cells
                        for stat, val in zip(("mean", "std"), row.cells[cp])
                    },
                }
                for row in rows
            ],
        }
        p.write_text(json.dumps(payload, indent=2) + "\n")
    else:
        raise DataError(f"unknown report format {format!r}")
    if series is not None:
        lines = ["method,pattern_id,t,c_accuracy"]
        for s in series:
            for t, value in enumerate(s.values, start=1):
                lines.append(f"{s.method},{s.pattern_id},{t},{value!r}")
        series_path(p).write_text("\n".join(lines) + "\n")
    return p
