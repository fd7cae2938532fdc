"""VAEMIR accuracy as a function of k on the desk-scale synthetic dataset.

Runs one sweep per seed set and prints each test year's R^2 curve with the
best k marked, plus a text plot of the seed-averaged curve.

    python3 scripts/k_sweep.py --seed-sets 1 2 3 4 5 --out runs/sweep
"""

import argparse
from pathlib import Path

from vaemir.data import atomic_write_text
from vaemir.evaluation import ExperimentConfig, build_splits, sweep_k
from vaemir.synth import SynthConfig, generate
from vaemir.vae import VaeTrainConfig


def bar(value, lo, hi, width=40):
    frac = 0.0 if hi == lo else (value - lo) / (hi - lo)
    return "#" * max(1, round(frac * width))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--seed-sets", type=int, nargs="+", default=[1, 2, 3, 4, 5],
                    help="each value is swept as its own single-seed set")
    ap.add_argument("--k-values", type=int, nargs="+", default=[1] + list(range(10, 101, 10)))
    ap.add_argument("--vae-epochs", type=int, default=30)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    bags, _ = generate(SynthConfig(seed=args.data_seed))
    plan = build_splits(sorted({b.year for b in bags}), 2010)
    cfg = ExperimentConfig(vae=VaeTrainConfig(epochs=args.vae_epochs))

    # one run over every seed; per-seed curves are slices of the same rows
    res = sweep_k(bags, plan, args.k_values, args.seed_sets, cfg, threads=args.threads)
    for s in args.seed_sets:
        rows = [r for r in res.report.rows if r.seed == s]
        best = {}
        for year in plan.test_years:
            curve = {r.k: r.r2 for r in rows if r.test_year == year}
            best[year] = min(curve, key=lambda k: (-curve[k], k))
        print(f"seed {s}: best k {best}")

    print("\nseed-averaged R^2")
    curves = res.curves
    lo, hi = min(c.mean_r2 for c in curves), max(c.mean_r2 for c in curves)
    for c in curves:
        mark = " *" if res.best_k()[c.test_year] == c.k else ""
        print(f"{c.test_year} k={c.k:>3} {c.mean_r2:7.4f} {bar(c.mean_r2, lo, hi)}{mark}")

    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(args.out / "curves.csv", res.to_csv())
        atomic_write_text(args.out / "report.csv", res.report.to_csv())


if __name__ == "__main__":
    main()
