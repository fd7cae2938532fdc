"""Command-line entry point: ``vaemir {generate,train-vae,score,eval,sweep-k}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
All flags are validated before any work starts and every output file is
written atomically, so a failed run leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .data import atomic_write_text, read_jsonl, write_jsonl
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .evaluation import (
    ExperimentConfig,
    build_splits,
    roc_auc,
    run_experiment,
    sweep_k,
)
from .mir import METHODS, MirConfig
from .regressor import RegressorTrainConfig
from .synth import SynthConfig, generate
from .vae import VaeModel, VaeTrainConfig, anomaly_scores, progress_ok, train_vae

log = logging.getLogger("vaemir")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- flag parsing helpers ----------------------------------------------------


def _int_list(text: str) -> list[int]:
    """``"1,10:100:10"`` -> ``[1, 10, 20, ..., 100]``; ``a:b`` ranges are inclusive."""
    out: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if ":" in part:
                bits = [int(b) for b in part.split(":")]
                if len(bits) not in (2, 3):
                    raise ValueError
                step = bits[2] if len(bits) == 3 else 1
                if step < 1:
                    raise ValueError
                out.extend(range(bits[0], bits[1] + 1, step))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def _year_range(text: str) -> tuple[int, int]:
    try:
        if ":" in text:
            a, b = (int(v) for v in text.split(":"))
        else:
            a = b = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid year range {text!r}; use FIRST:LAST") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"year range {text!r} is empty")
    return a, b


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {','.join(METHODS)}")
    return methods


def _ks(text: str) -> list:
    # "N" stands for the smallest bag size in the dataset
    parts = [p.strip() for p in text.split(",") if p.strip()]
    out = []
    for p in parts:
        if p.upper() == "N":
            out.append("N")
        else:
            out.extend(_int_list(p))
    if not out:
        raise argparse.ArgumentTypeError("empty k list")
    return out


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


def demo_path() -> Path:
    return Path(str(resources.files("vaemir") / "demo" / "demo.jsonl"))


def _data_path(text: str) -> Path:
    return demo_path() if text == "demo" else Path(text)


def _check_writable_file(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise DataError(f"cannot write {path}: directory {parent} does not exist")
    if path.is_dir():
        raise DataError(f"cannot write {path}: it is a directory")


def _check_writable_dir(path: Path) -> None:
    if path.exists() and not path.is_dir():
        raise DataError(f"output directory {path} exists and is not a directory")
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise DataError(f"cannot create {path}: directory {parent} does not exist")


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = SynthConfig(
        n_bags_per_year=args.bags_per_year,
        years=args.years,
        instances_per_bag=args.n,
        feature_dim=args.dim,
        contamination_rate=args.contamination,
        mixing_fraction=args.alpha,
        noise_sigma=args.noise_sigma,
        year_drift=args.year_drift,
        seed=args.seed,
    )
    out = Path(args.out)
    _check_writable_file(out)
    bags, truth = generate(cfg)
    sidecar = out.with_name(out.stem + ".truth.json")
    atomic_write_text(sidecar, truth.to_json(cfg) + "\n")
    write_jsonl(out, bags)
    print(f"wrote {len(bags)} bags to {out} (flag rate {truth.flag_rate:.4f}); ground truth in {sidecar}")
    return 0


def _vae_config(args, seed: int) -> VaeTrainConfig:
    return VaeTrainConfig(
        epochs=args.vae_epochs,
        batch_size=args.vae_batch_size,
        latent_dim=args.latent_dim,
        hidden_dims=tuple(args.hidden_dims),
        learning_rate=args.vae_lr,
        seed=seed,
    )


def cmd_train_vae(args) -> int:
    cfg = _vae_config(args, args.seed)
    out = Path(args.out)
    _check_writable_file(out)
    bags = read_jsonl(_data_path(args.data))
    if args.train_years:
        first, last = args.train_years
        bags = [b for b in bags if first <= b.year <= last]
        if not bags:
            raise DataError(f"no bags in years {first}:{last}")
    x = np.concatenate([b.instances for b in bags])
    result = train_vae(x, cfg)
    atomic_write_text(out, result.model.to_json() + "\n")
    losses = result.epoch_losses
    w = max(1, len(losses) // 10)
    print(f"trained on {x.shape[0]} instances; final epoch loss {losses[-1]:.6f}")
    print(
        f"mean loss first 10% {np.mean(losses[:w]):.6f}, last 10% {np.mean(losses[-w:]):.6f}"
        + ("" if progress_ok(losses) else " (no progress)")
    )
    return 0


def cmd_score(args) -> int:
    out = Path(args.out)
    _check_writable_file(out)
    try:
        model = VaeModel.from_json(Path(args.model).read_text(encoding="utf-8"))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"cannot read model {args.model}: {e}") from None
    bags = read_jsonl(_data_path(args.data))
    if bags[0].dim != model.dim:
        raise DataError(f"model expects {model.dim} features but the dataset has {bags[0].dim}")
    has_flags = all(b.anomaly_flags is not None for b in bags)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bag_id", "instance_index", "score"] + (["flag"] if has_flags else []))
    all_scores, all_flags = [], []
    for b in bags:
        scores = anomaly_scores(model, b.instances)
        all_scores.append(scores)
        for i, s in enumerate(scores):
            row = [b.bag_id, i, repr(float(s))]
            if has_flags:
                row.append(int(b.anomaly_flags[i]))
            w.writerow(row)
        if has_flags:
            all_flags.append(b.anomaly_flags)
    atomic_write_text(out, buf.getvalue())
    n = sum(s.size for s in all_scores)
    print(f"scored {n} instances in {len(bags)} bags -> {out}")
    if has_flags:
        flags = np.concatenate(all_flags)
        if flags.any() and not flags.all():
            print(f"ROC-AUC vs anomaly flags: {roc_auc(np.concatenate(all_scores), flags):.6f}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    reg = RegressorTrainConfig(epochs=args.reg_epochs, batch_size=args.reg_batch_size, learning_rate=args.reg_lr)
    mir = MirConfig(
        regressor=reg,
        instance_aggregate=args.instance_aggregate,
        prime_max_iters=args.prime_max_iters,
        n_clusters=args.n_clusters,
    )
    return ExperimentConfig(vae=_vae_config(args, 0), mir=mir, transductive=args.transductive)


def _seeds(args) -> list[int]:
    if args.seeds:
        return list(args.seeds)
    return [args.seed + i for i in range(1, args.repeats + 1)]


def _resolve_ks(ks, bags) -> list[int]:
    n_min = min(b.n for b in bags)
    out = sorted({n_min if k == "N" else int(k) for k in ks})
    bad = [k for k in out if not 1 <= k <= n_min]
    if bad:
        raise ConfigError(f"k values {bad} outside [1, {n_min}] (smallest bag size)")
    return out


def _write_outputs(out: Path, files: dict[str, str]) -> None:
    out.mkdir(exist_ok=True)
    for name, text in files.items():
        atomic_write_text(out / name, text)


def cmd_eval(args) -> int:
    if "vaemir" in args.methods and not args.k:
        raise UsageError("method vaemir requires --k")
    cfg = _experiment_config(args)
    out = Path(args.out)
    _check_writable_dir(out)
    bags = read_jsonl(_data_path(args.data))
    plan = build_splits(sorted({b.year for b in bags}), args.first_test_year)
    ks = _resolve_ks(args.k, bags) if "vaemir" in args.methods else None
    report = run_experiment(bags, args.methods, plan, _seeds(args), ks, cfg, threads=args.threads)
    _write_outputs(
        out,
        {
            "report.csv": report.to_csv(),
            "summary.json": report.summary_json(),
            "predictions.csv": report.predictions_csv(),
        },
    )
    print(f"{len(report.rows)} result rows over test years {plan.test_years} -> {out}")
    for row in sorted(report.average(), key=lambda r: (r["method"], r["k"] or 0)):
        k = "" if row["k"] is None else f" k={row['k']}"
        print(f"  {row['method']}{k}: mean RMSE {row['rmse']:.4f}, mean R2 {row['r2']:.4f}")
    return 0


def cmd_sweep_k(args) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    _check_writable_dir(out)
    bags = read_jsonl(_data_path(args.data))
    plan = build_splits(sorted({b.year for b in bags}), args.first_test_year)
    ks = _resolve_ks(args.k_values, bags)
    result = sweep_k(bags, plan, ks, _seeds(args), cfg, threads=args.threads)
    _write_outputs(out, {"curves.csv": result.to_csv(), "report.csv": result.report.to_csv()})
    print(f"k-sweep over {ks} -> {out}")
    for year, k in result.best_k().items():
        print(f"  {year}: best k = {k}")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_nonneg_int, default=0, help="base random seed")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker processes for eval fan-out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="vaemir", description="VAE-based multiple instance regression")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic contaminated dataset")
    p.add_argument("--out", required=True, help="dataset JSONL path")
    p.add_argument("--bags-per-year", type=_positive_int, default=100)
    p.add_argument("--years", type=_year_range, default=(2008, 2011), help="FIRST:LAST, inclusive")
    p.add_argument("--n", type=_positive_int, default=100, help="instances per bag")
    p.add_argument("--dim", type=_positive_int, default=16, help="features per instance")
    p.add_argument("--contamination", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=0.6, help="crop fraction of a mixed pixel")
    p.add_argument("--noise-sigma", type=float, default=SynthConfig.noise_sigma)
    p.add_argument("--year-drift", type=float, default=SynthConfig.year_drift)
    p.set_defaults(func=cmd_generate)

    def vae_flags(p):
        p.add_argument("--vae-epochs", "--epochs", dest="vae_epochs", type=int, default=200)
        p.add_argument("--vae-batch-size", "--batch-size", dest="vae_batch_size", type=int, default=64)
        p.add_argument("--latent-dim", type=int, default=8)
        p.add_argument("--hidden-dims", type=_int_list, default=[64, 32])
        p.add_argument("--vae-lr", "--lr", dest="vae_lr", type=float, default=1e-3)

    p = sub.add_parser("train-vae", parents=[common], help="train a VAE on every instance")
    p.add_argument("--data", required=True, help="dataset JSONL path, or 'demo'")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--train-years", type=_year_range, default=None, help="FIRST:LAST subset of years")
    vae_flags(p)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("score", parents=[common], help="anomaly-score every instance")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="scores CSV path")
    p.set_defaults(func=cmd_score)

    def experiment_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--first-test-year", type=int, required=True)
        p.add_argument("--repeats", type=_positive_int, default=5)
        p.add_argument("--seeds", type=_int_list, default=None, help="explicit repeat seeds")
        p.add_argument("--transductive", action="store_true", help="also train the VAE on test-year instances")
        p.add_argument("--reg-epochs", type=int, default=300)
        p.add_argument("--reg-batch-size", type=int, default=32)
        p.add_argument("--reg-lr", type=float, default=1e-3)
        p.add_argument("--n-clusters", type=int, default=5)
        p.add_argument("--prime-max-iters", type=int, default=20)
        p.add_argument("--instance-aggregate", choices=("mean", "median"), default="mean")
        vae_flags(p)

    p = sub.add_parser("eval", parents=[common], help="expanding-window evaluation of MIR methods")
    experiment_flags(p)
    p.add_argument("--methods", type=_methods, default=list(METHODS))
    p.add_argument("--k", type=_ks, default=None, help="VAEMIR k (list allowed; 'N' = bag size)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-k", parents=[common], help="VAEMIR performance across k")
    experiment_flags(p)
    p.add_argument("--k-values", type=_ks, required=True, help="e.g. 1,10:100:10")
    p.set_defaults(func=cmd_sweep_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"vaemir {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"vaemir {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError, json.JSONDecodeError) as e:
        print(f"vaemir {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
