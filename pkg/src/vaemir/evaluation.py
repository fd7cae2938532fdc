"""Metrics, expanding-window year splits, repeated-seed runs and k-sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .data import Bag, check_consistent, labeled, years_of
from .errors import ConfigError, DataError, ShapeError
from .mir import METHODS, MirConfig, fit_method, predict_bags, vaemir_fit
from .vae import VaeTrainConfig, anomaly_scores, train_vae

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)


# -- metrics ---------------------------------------------------------------


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.size} predictions for {truth.size} targets")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise ShapeError("rmse of empty vectors is undefined")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def r2(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        raise ShapeError("r2 needs at least two values")
    ss_tot = float(np.sum((truth - np.mean(truth)) ** 2))
    if ss_tot == 0.0:
        raise ShapeError("r2 is undefined for constant targets")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot


def roc_auc(scores, flags) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    flags = np.asarray(flags, dtype=bool).ravel()
    if scores.shape != flags.shape:
        raise ShapeError(f"{scores.size} scores for {flags.size} flags")
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ShapeError("AUC needs both positive and negative flags")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size)
    # average ranks over runs of tied scores
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_scores)) + 1]
    ends = np.r_[starts[1:], scores.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    u = ranks[flags].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- splits ----------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train_years: frozenset
    test_year: int


@dataclass
class SplitPlan:
    splits: list[Split]

    def __iter__(self):
        return iter(self.splits)

    def __len__(self):
        return len(self.splits)

    @property
    def test_years(self) -> list[int]:
        return [s.test_year for s in self.splits]


def build_splits(years_present: Sequence[int], first_test_year: int) -> SplitPlan:
    """One split per present year >= ``first_test_year``, trained on all earlier years."""
    years = sorted(set(int(y) for y in years_present))
    if not any(y < first_test_year for y in years):
        raise ConfigError(f"no data precede the first test year {first_test_year}")
    tests = [y for y in years if y >= first_test_year]
    if not tests:
        raise ConfigError(f"no data at or after the first test year {first_test_year}")
    return SplitPlan([Split(frozenset(y for y in years if y < t), t) for t in tests])


def split_bags(bags: Sequence[Bag], split: Split) -> tuple[list[Bag], list[Bag]]:
    train = [b for b in bags if b.year in split.train_years]
    test = [b for b in bags if b.year == split.test_year]
    return train, test


def check_no_leakage(bags: Sequence[Bag], plan: SplitPlan) -> None:
    """Raise if any split trains on a bag from its own test year."""
    for split in plan:
        if any(y >= split.test_year for y in split.train_years):
            raise DataError(f"split {split.test_year} trains on year >= its test year")
        train, test = split_bags(bags, split)
        if not train:
            raise DataError(f"split {split.test_year} has an empty training set")
        overlap = {b.bag_id for b in train} & {b.bag_id for b in test}
        if overlap:
            raise DataError(f"split {split.test_year} leaks test bags {sorted(overlap)[:5]}")


# -- experiment runner -----------------------------------------------------


def derive_seed(seed: int, test_year: int, purpose: int) -> int:
    """Per-cell seed; ``purpose`` separates the VAE, regressor and k-means streams."""
    return int(np.random.SeedSequence([seed, test_year, purpose]).generate_state(1)[0])


REG, VAE, CLUSTER = 0, 1, 2


@dataclass
class ReportRow:
    method: str
    test_year: int
    seed: int
    rmse: float
    r2: float
    k: int | None = None


@dataclass
class PredictionRow:
    method: str
    k: int | None
    test_year: int
    seed: int
    bag_id: str
    truth: float
    pred: float


@dataclass
class EvalReport:
    rows: list[ReportRow]
    predictions: list[PredictionRow] = field(default_factory=list, repr=False)

    def _groups(self) -> dict:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.method, r.k, r.test_year), []).append(r)
        return groups

    def per_year(self) -> list[dict]:
        """Mean over seeds for each (method, k, test_year)."""
        out = []
        for (method, k, year), rows in self._groups().items():
            out.append(
                {
                    "method": method,
                    "k": k,
                    "test_year": year,
                    "rmse": float(np.mean([r.rmse for r in rows])),
                    "r2": float(np.mean([r.r2 for r in rows])),
                    "n_seeds": len(rows),
                }
            )
        return out

    def average(self) -> list[dict]:
        """Mean over test years of the per-year means, per (method, k)."""
        acc: dict = {}
        for row in self.per_year():
            acc.setdefault((row["method"], row["k"]), []).append(row)
        return [
            {
                "method": m,
                "k": k,
                "rmse": float(np.mean([r["rmse"] for r in rows])),
                "r2": float(np.mean([r["r2"] for r in rows])),
                "n_years": len(rows),
            }
            for (m, k), rows in acc.items()
        ]

    def best_k(self) -> dict[int, int]:
        """Per test year, the VAEMIR k with the highest mean R^2 (smallest k on ties)."""
        best: dict[int, tuple[float, int]] = {}
        for row in self.per_year():
            if row["method"] != "vaemir":
                continue
            year, cand = row["test_year"], (-row["r2"], row["k"])
            if year not in best or cand < best[year]:
                best[year] = cand
        return {year: v[1] for year, v in sorted(best.items())}

    def mean_rmse(self, method: str, seed: int, k: int | None = None) -> float:
        """Mean over test years of one seed's RMSE."""
        vals = [r.rmse for r in self.rows if r.method == method and r.seed == seed and r.k == k]
        if not vals:
            raise KeyError((method, seed, k))
        return float(np.mean(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "test_year", "seed", "rmse", "r2", "k"])
        for r in self.rows:
            w.writerow([r.method, r.test_year, r.seed, repr(r.rmse), repr(r.r2), "" if r.k is None else r.k])
        return buf.getvalue()

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "k", "test_year", "seed", "bag_id", "truth", "pred"])
        for p in self.predictions:
            w.writerow(
                [p.method, "" if p.k is None else p.k, p.test_year, p.seed, p.bag_id, repr(p.truth), repr(p.pred)]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "per_year": self.per_year(),
            "average": self.average(),
            "best_k": {str(y): k for y, k in self.best_k().items()},
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


@dataclass
class ExperimentConfig:
    vae: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    mir: MirConfig = field(default_factory=MirConfig)
    transductive: bool = False


def _normalize_ks(k) -> list[int]:
    if k is None:
        return []
    ks = [int(k)] if np.isscalar(k) else [int(v) for v in k]
    if not ks:
        raise ConfigError("empty list of k values")
    return ks


def _vae_for_split(train, test, cfg: ExperimentConfig, seed: int, test_year: int):
    pool = list(train) + (list(test) if cfg.transductive else [])
    x = np.concatenate([b.instances for b in pool])
    vae_cfg = replace(cfg.vae, seed=derive_seed(seed, test_year, VAE))
    return train_vae(x, vae_cfg).model


def _run_cell(bags, split: Split, seed: int, methods, ks, cfg: ExperimentConfig):
    train, test = split_bags(bags, split)
    truth = np.array([b.label for b in test])
    mir_cfg = replace(cfg.mir, regressor=replace(cfg.mir.regressor, seed=derive_seed(seed, split.test_year, REG)))
    rows, preds = [], []

    def record(method, k, pred):
        rows.append(ReportRow(method, split.test_year, seed, rmse(pred, truth), r2(pred, truth), k))
        preds.extend(
            PredictionRow(method, k, split.test_year, seed, b.bag_id, float(t), float(p))
            for b, t, p in zip(test, truth, pred)
        )

    vae = None
    for method in methods:
        if method == "vaemir":
            if vae is None:
                vae = _vae_for_split(train, test, cfg, seed, split.test_year)
            train_scores = [anomaly_scores(vae, b.instances) for b in train]
            for k in ks:
                model = vaemir_fit(train, vae, k, mir_cfg, scores=train_scores)
                record(method, k, predict_bags(model, test))
        else:
            model = fit_method(
                method, train, mir_cfg, cluster_seed=derive_seed(seed, split.test_year, CLUSTER)
            )
            record(method, None, predict_bags(model, test))
    return rows, preds


def _map_cells(fn, cells: list[tuple], threads: int):
    if threads <= 1 or len(cells) <= 1:
        return [fn(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *c) for c in cells]
        return [f.result() for f in futures]


def _validate_dataset(bags: Sequence[Bag], plan: SplitPlan) -> None:
    check_consistent(bags)
    present = set(years_of(bags))
    for split in plan:
        missing = ({split.test_year} | set(split.train_years)) - present
        if missing:
            raise DataError(f"split {split.test_year} needs years {sorted(missing)} that have no bags")
        train, test = split_bags(bags, split)
        labeled(train)
        labeled(test, "test")
        if len(test) < 2:
            raise DataError(f"test year {split.test_year} has fewer than 2 bags")
    check_no_leakage(bags, plan)


def run_experiment(
    bags: Sequence[Bag],
    methods: Iterable[str],
    plan: SplitPlan,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    k=None,
    cfg: ExperimentConfig | None = None,
    threads: int = 1,
) -> EvalReport:
    """Train and score each method for every (split, seed) cell.

    ``k`` may be a single int or a list; VAEMIR runs once per k value and
    those runs share one VAE per cell.
    """
    cfg = cfg or ExperimentConfig()
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    ks = _normalize_ks(k)
    if "vaemir" in methods and not ks:
        raise ConfigError("method vaemir requires k")
    if not seeds:
        raise ConfigError("at least one seed is required")
    _validate_dataset(bags, plan)
    if ks:
        n_min = min(b.n for b in bags)
        bad = [v for v in ks if not 1 <= v <= n_min]
        if bad:
            raise ConfigError(f"k values {bad} outside [1, {n_min}] (smallest bag size)")

    cells = [(list(bags), split, int(s), methods, ks, cfg) for split in plan for s in seeds]
    rows, preds = [], []
    for r, p in _map_cells(_run_cell, cells, threads):
        rows.extend(r)
        preds.extend(p)
    order = {m: i for i, m in enumerate(methods)}
    # sorting by seed value makes every aggregate independent of the seed order given
    rows.sort(key=lambda r: (order[r.method], r.k or 0, r.test_year, r.seed))
    preds.sort(key=lambda p: (order[p.method], p.k or 0, p.test_year, p.seed))
    return EvalReport(rows, preds)


# -- k sweep ---------------------------------------------------------------


@dataclass
class CurvePoint:
    test_year: int
    k: int
    mean_rmse: float
    mean_r2: float


@dataclass
class SweepResult:
    report: EvalReport

    @property
    def curves(self) -> list[CurvePoint]:
        return [
            CurvePoint(r["test_year"], r["k"], r["rmse"], r["r2"])
            for r in sorted(self.report.per_year(), key=lambda r: (r["test_year"], r["k"]))
        ]

    def best_k(self) -> dict[int, int]:
        return self.report.best_k()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_year", "k", "mean_rmse", "mean_r2"])
        for c in self.curves:
            w.writerow([c.test_year, c.k, repr(c.mean_rmse), repr(c.mean_r2)])
        return buf.getvalue()


def sweep_k(
    bags: Sequence[Bag],
    plan: SplitPlan,
    k_values: Sequence[int],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    cfg: ExperimentConfig | None = None,
    threads: int = 1,
) -> SweepResult:
    """VAEMIR test performance as a function of k, averaged over seeds."""
    if not list(k_values):
        raise ConfigError("k_values must not be empty")
    report = run_experiment(bags, ["vaemir"], plan, seeds, list(k_values), cfg, threads)
    return SweepResult(report)
