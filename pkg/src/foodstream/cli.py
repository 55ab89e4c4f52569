"""Command-line entry point.

Subcommands: ``simulate`` (generate a benchmark), ``run`` (evaluate methods on
a benchmark), ``ablate`` (the full sampling/window ablation matrix for one
backbone), and ``gradcheck`` (finite-difference verification of the adapter
gradients). A JSON config file (--config or $FOODSTREAM_CONFIG) can override
any hyperparameter default; explicit CLI flags win over the config file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .adapt import gradcheck_report
from .bench import (
    ABLATION_ROWS,
    COMPARISON_METHODS,
    DEFAULT_CHECKPOINTS,
    export_report,
    parse_method,
    render_table,
    run_benchmark_full,
)
from .core import DataError, NumericalError
from .simgen import SHAPE_CONFIGS, SimConfig, custom_config, generate_benchmark, load_benchmark, write_benchmark

CONFIG_ENV_VAR = "FOODSTREAM_CONFIG"

# Hyperparameters a config file may override for run/ablate.
_METHOD_PARAM_KEYS = (
    "alpha",
    "k",
    "t_min",
    "learning_rate",
    "weight_decay",
    "barlow_lambda",
    "batch_size",
    "jitter_sigma",
    "warmup",
    "mix_weight",
    "decay_halflife",
    "freq_weight",
    "svm_learning_rate",
    "svm_margin",
)

_SIM_KEYS = tuple(SimConfig.__dataclass_fields__.keys())


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _load_config(path: str | None) -> dict:
    chosen = path or os.environ.get(CONFIG_ENV_VAR)
    if not chosen:
        return {}
    p = Path(chosen)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return cfg


def _build_parser() -> _Parser:
    parser = _Parser(prog="foodstream", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a benchmark JSONL + manifest")
    sim.add_argument("--shape", choices=sorted(SHAPE_CONFIGS) + ["custom"], required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.add_argument("--config", default=None)
    for key in _SIM_KEYS:
        if key == "seed":
            continue
        sim.add_argument(f"--{key.replace('_', '-')}", dest=key, type=_SIM_FIELD_TYPES[key], default=None)

    run = sub.add_parser("run", help="evaluate methods on a benchmark")
    run.add_argument("--benchmark", required=True)
    run.add_argument("--methods", default=",".join(COMPARISON_METHODS))
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--checkpoints", default=None, help="comma-separated time steps")
    run.add_argument("--config", default=None)

    abl = sub.add_parser("ablate", help="run the sampling/window ablation matrix")
    abl.add_argument("--benchmark", required=True)
    abl.add_argument("--backbone", choices=["simsiam", "barlow"], required=True)
    abl.add_argument("--seed", type=int, default=None)
    abl.add_argument("--out", required=True)
    abl.add_argument("--workers", type=int, default=None)
    abl.add_argument("--checkpoints", default=None)
    abl.add_argument("--config", default=None)

    grad = sub.add_parser("gradcheck", help="finite-difference check of adapter gradients")
    grad.add_argument("--dim", type=int, default=8)
    grad.add_argument("--groups", type=int, default=2)
    grad.add_argument("--instances", type=int, default=20)
    grad.add_argument("--seed", type=int, default=2024)

    return parser


_SIM_FIELD_TYPES = {
    "num_patterns": int,
    "pattern_length": int,
    "feature_dim": int,
    "smoothing": float,
    "seed": int,
    "classes_per_pattern_target": int,
    "sub_clusters_per_class": int,
    "prototype_separation": float,
    "global_classes": int,
    "preferred_classes": int,
    "new_class_rate": float,
    "noise_sigma": float,
    "sub_cluster_spread": float,
    "seed_len_min": int,
    "seed_len_max": int,
}


def _pick(cli_value, config: dict, key: str, default):
    """CLI flag beats config file beats default."""
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    seed = int(_pick(args.seed, config, "seed", 0))
    if args.shape == "custom":
        base = SimConfig(seed=seed)
    else:
        base = SHAPE_CONFIGS[args.shape](seed)
    overrides = {}
    for key in _SIM_KEYS:
        if key == "seed":
            continue
        value = _pick(getattr(args, key, None), config, key, None)
        if value is not None:
            overrides[key] = _SIM_FIELD_TYPES[key](value)
    cfg = custom_config(base, **overrides)
    benchmark = generate_benchmark(cfg)
    out = write_benchmark(benchmark, args.out)
    total = sum(len(p) for p in benchmark.patterns)
    mean_classes = sum(len(set(p.labels())) for p in benchmark.patterns) / len(benchmark.patterns)
    print(
        f"wrote {out}: {len(benchmark.patterns)} patterns, {total} observations, "
        f"d={benchmark.feature_dim}, mean distinct classes/pattern {mean_classes:.1f}"
    )
    return 0


def _method_params(config: dict) -> dict[str, float]:
    return {k: config[k] for k in _METHOD_PARAM_KEYS if k in config}


def _parse_checkpoints(raw: str | None, config: dict):
    value = _pick(raw, config, "checkpoints", None)
    if value is None:
        return DEFAULT_CHECKPOINTS
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    return tuple(int(v) for v in value)


def _run_and_export(methods, args, config) -> int:
    benchmark = load_benchmark(args.benchmark)
    seed = int(_pick(args.seed, config, "seed", 0))
    workers = int(_pick(args.workers, config, "workers", 1))
    checkpoints = _parse_checkpoints(args.checkpoints, config)
    result = run_benchmark_full(
        methods,
        benchmark.patterns,
        seed,
        class_prototypes=benchmark.class_prototypes or None,
        checkpoints=checkpoints,
        workers=workers,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_report(result.rows, "csv", out_dir / "report.csv", series=result.series)
    export_report(result.rows, "json", out_dir / "report.json")
    print(render_table(result.rows))
    print(f"report written to {out_dir}")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args.config)
    params = _method_params(config)
    tokens = [tok for tok in args.methods.split(",") if tok.strip()]
    if not tokens:
        raise UsageError("--methods must name at least one method")
    try:
        methods = [parse_method(tok) for tok in tokens]
    except DataError as exc:
        raise UsageError(str(exc)) from exc
    for method in methods:
        method.params.update(params)
    return _run_and_export(methods, args, config)


def _cmd_ablate(args) -> int:
    config = _load_config(args.config)
    params = _method_params(config)
    methods = [parse_method(tok, backbone=args.backbone) for tok in ABLATION_ROWS]
    for method in methods:
        method.params.update(params)
    return _run_and_export(methods, args, config)


def _cmd_gradcheck(args) -> int:
    report = gradcheck_report(dim=args.dim, groups=args.groups, instances=args.instances, seed=args.seed)
    for loss in ("simsiam", "barlow"):
        entry = report[loss]
        status = "ok" if entry["ok"] else "FAIL"
        print(
            f"{loss}: max rel err {entry['max_rel_err']:.3e} over {entry['entries_checked']} entries [{status}]"
        )
    if not report["ok"]:
        print(f"gradient check failed (tolerance {report['rel_tol']})", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        return _cmd_gradcheck(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
