"""Bag representations and the five multiple-instance regression methods.

Every method ends in the same :class:`~vaemir.regressor.MlpRegressor`; they
differ only in what the regressor is trained on and how a bag is turned into
a prediction:

``instance``  every (instance, bag label) pair; bag prediction aggregates
              per-instance predictions (mean by default).
``mean``      one prototype per bag, the mean of all instances.
``prime``     one selected instance per bag, chosen by an EM-style loop;
              prediction is the median over instances.
``cluster``   k-means over all instances, one regressor per cluster, keep
              the cluster regressor with the lowest training-bag RMSE.
``vaemir``    mean of the ``k`` instances with the lowest VAE anomaly score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Bag, check_consistent, labeled
from .errors import ConfigError, DataError, ShapeError
from .kmeans import assign, kmeans
from .regressor import MlpRegressor, RegressorTrainConfig, fit_arrays, predict
from .vae import VaeModel, anomaly_scores

log = logging.getLogger(__name__)

METHODS = ("instance", "mean", "prime", "cluster", "vaemir")


@dataclass
class Prototype:
    bag_id: str
    vector: np.ndarray
    k_used: int


@dataclass
class MirConfig:
    regressor: RegressorTrainConfig = field(default_factory=RegressorTrainConfig)
    # epochs for fits over all instances; None keeps the gradient-step budget
    # equal to a bag-level fit (epochs * n_bags / n_pairs)
    instance_epochs: int | None = None
    instance_aggregate: str = "mean"
    prime_max_iters: int = 20
    prime_aggregate: str = "median"
    n_clusters: int = 5

    def __post_init__(self):
        for name in ("instance_aggregate", "prime_aggregate"):
            if getattr(self, name) not in ("mean", "median"):
                raise ConfigError(f"{name} must be 'mean' or 'median'")
        if self.prime_max_iters < 1:
            raise ConfigError("prime_max_iters must be >= 1")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.instance_epochs is not None and self.instance_epochs < 1:
            raise ConfigError("instance_epochs must be >= 1")


def _selected_mean(instances: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # sorted indices keep the summation order fixed, so k == N reproduces
    # the plain bag mean bit for bit
    return instances[np.sort(idx)].mean(axis=0)


def select_lowest(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest scores, ties going to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.size:
        raise ConfigError(f"k={k} outside [1, {scores.size}]")
    return np.argsort(scores, kind="stable")[:k]


def vaemir_prototype(bag: Bag, scores, k: int) -> Prototype:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (bag.n,):
        raise ShapeError(f"bag {bag.bag_id}: {scores.size} scores for {bag.n} instances")
    if not 1 <= k <= bag.n:
        raise ConfigError(f"bag {bag.bag_id}: k={k} outside [1, {bag.n}]")
    idx = select_lowest(scores, k)
    return Prototype(bag.bag_id, _selected_mean(bag.instances, idx), k)


def mean_prototype(bag: Bag) -> Prototype:
    return Prototype(bag.bag_id, _selected_mean(bag.instances, np.arange(bag.n)), bag.n)


def _aggregate(values: np.ndarray, how: str) -> float:
    return float(np.median(values)) if how == "median" else float(np.mean(values))


def _instance_cfg(cfg: MirConfig, n_pairs: int, n_bags: int) -> RegressorTrainConfig:
    if cfg.instance_epochs is not None:
        epochs = cfg.instance_epochs
    else:
        epochs = max(1, round(cfg.regressor.epochs * n_bags / n_pairs))
    return replace(cfg.regressor, epochs=epochs)


def _stack(bags: Sequence[Bag]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All instances, their bag labels, and their bag index."""
    x = np.concatenate([b.instances for b in bags])
    y = np.concatenate([np.full(b.n, b.label) for b in bags])
    owner = np.concatenate([np.full(b.n, i) for i, b in enumerate(bags)])
    return x, y, owner


def _check_training(bags: Sequence[Bag]) -> None:
    if not bags:
        raise DataError("no training bags")
    check_consistent(bags)
    labeled(bags)


# -- Mean Regression -------------------------------------------------------


@dataclass
class MeanRegression:
    regressor: MlpRegressor

    def predict(self, bag: Bag) -> float:
        return predict(self.regressor, mean_prototype(bag).vector)


def mean_fit(bags: Sequence[Bag], cfg: MirConfig | None = None) -> MeanRegression:
    cfg = cfg or MirConfig()
    _check_training(bags)
    x = np.array([mean_prototype(b).vector for b in bags])
    y = np.array([b.label for b in bags])
    return MeanRegression(fit_arrays(x, y, cfg.regressor))


# -- Instance-MIR ----------------------------------------------------------


@dataclass
class InstanceMir:
    regressor: MlpRegressor
    aggregate: str = "mean"

    def predict(self, bag: Bag) -> float:
        return _aggregate(predict(self.regressor, bag.instances), self.aggregate)


def instance_mir_fit(bags: Sequence[Bag], cfg: MirConfig | None = None) -> InstanceMir:
    cfg = cfg or MirConfig()
    _check_training(bags)
    x, y, _ = _stack(bags)
    reg = fit_arrays(x, y, _instance_cfg(cfg, len(y), len(bags)))
    return InstanceMir(reg, cfg.instance_aggregate)


def instance_mir_predict(model: InstanceMir, bag: Bag) -> float:
    return model.predict(bag)


# -- Prime-MIR -------------------------------------------------------------


@dataclass
class PrimeMir:
    regressor: MlpRegressor
    selected: np.ndarray  # per training bag, index of its primary instance
    residual_trace: list[float]  # mean |residual| of the selections, per iteration
    n_iter: int  # accepted refits
    stop_reason: str  # "stable", "no_improvement" or "max_iters"
    aggregate: str = "median"

    def predict(self, bag: Bag) -> float:
        return _aggregate(predict(self.regressor, bag.instances), self.aggregate)


def _select_primary(pred: np.ndarray, y: np.ndarray, bags) -> tuple[np.ndarray, float]:
    resid = np.abs(pred - y)
    selected = np.empty(len(bags), dtype=np.int64)
    best = np.empty(len(bags))
    start = 0
    for i, b in enumerate(bags):
        r = resid[start : start + b.n]
        j = int(np.argmin(r))
        selected[i], best[i] = j, r[j]
        start += b.n
    return selected, float(best.mean())


def prime_mir_fit(bags: Sequence[Bag], cfg: MirConfig | None = None, max_iters: int | None = None) -> PrimeMir:
    """EM-style primary-instance selection.

    Starts from an all-instance fit, then alternates between picking each
    bag's best-fitting instance and refitting on those picks. Stops when the
    picks stop changing, after ``max_iters`` refits, or when a refit would
    raise the mean selected residual (that refit is discarded).
    """
    cfg = cfg or MirConfig()
    max_iters = cfg.prime_max_iters if max_iters is None else max_iters
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    _check_training(bags)
    x, y, _ = _stack(bags)
    offsets = np.concatenate([[0], np.cumsum([b.n for b in bags])[:-1]])
    labels = np.array([b.label for b in bags])

    reg = fit_arrays(x, y, _instance_cfg(cfg, len(y), len(bags)))
    selected, resid = _select_primary(predict(reg, x), y, bags)
    trace = [resid]
    stop_reason = "max_iters"
    n_iter = 0
    for it in range(1, max_iters + 1):
        cand = fit_arrays(x[offsets + selected], labels, cfg.regressor)
        cand_sel, cand_resid = _select_primary(predict(cand, x), y, bags)
        if cand_resid > trace[-1]:
            stop_reason = "no_improvement"
            break
        n_iter = it
        prev, reg, selected = selected, cand, cand_sel
        trace.append(cand_resid)
        log.debug("prime-mir iteration %d: residual %.6f", it, cand_resid)
        if np.array_equal(prev, cand_sel):
            stop_reason = "stable"
            break
    return PrimeMir(reg, selected, trace, n_iter, stop_reason, cfg.prime_aggregate)


def prime_mir_predict(model: PrimeMir, bag: Bag) -> float:
    return model.predict(bag)


# -- Cluster-MIR -----------------------------------------------------------


@dataclass
class ClusterMir:
    regressor: MlpRegressor
    centroids: np.ndarray
    chosen: int
    cluster_rmse: dict[int, float]

    def predict(self, bag: Bag) -> float:
        members = assign(bag.instances, self.centroids) == self.chosen
        rows = bag.instances[members] if members.any() else bag.instances
        return float(np.mean(predict(self.regressor, rows)))


def cluster_mir_fit(
    bags: Sequence[Bag],
    cfg: MirConfig | None = None,
    n_clusters: int | None = None,
    rng: np.random.Generator | int = 0,
) -> ClusterMir:
    cfg = cfg or MirConfig()
    n_clusters = cfg.n_clusters if n_clusters is None else n_clusters
    _check_training(bags)
    x, y, owner = _stack(bags)
    if n_clusters > len(x):
        raise ConfigError(f"n_clusters={n_clusters} exceeds the {len(x)} training instances")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    km = kmeans(x, n_clusters, rng)
    labels = np.array([b.label for b in bags])

    best = None
    scores: dict[int, float] = {}
    for c in range(n_clusters):
        members = km.labels == c
        if members.sum() < 2:
            continue
        reg = fit_arrays(x[members], y[members], _instance_cfg(cfg, int(members.sum()), len(bags)))
        pred = predict(reg, x[members])
        sums = np.bincount(owner[members], weights=pred, minlength=len(bags))
        counts = np.bincount(owner[members], minlength=len(bags))
        has = counts > 0
        bag_pred = sums[has] / counts[has]
        scores[c] = float(np.sqrt(np.mean((bag_pred - labels[has]) ** 2)))
        if best is None or scores[c] < scores[best[0]]:
            best = (c, reg)
    if best is None:
        raise DataError("no cluster holds enough instances to fit a regressor")
    return ClusterMir(best[1], km.centroids, best[0], scores)


def cluster_mir_predict(model: ClusterMir, bag: Bag) -> float:
    return model.predict(bag)


# -- VAEMIR ----------------------------------------------------------------


@dataclass
class Vaemir:
    regressor: MlpRegressor
    vae: VaeModel
    k: int

    def prototype(self, bag: Bag) -> Prototype:
        return vaemir_prototype(bag, anomaly_scores(self.vae, bag.instances), self.k)

    def predict(self, bag: Bag) -> float:
        if bag.n < self.k:
            raise ConfigError(f"k={self.k} exceeds the {bag.n} instances of bag {bag.bag_id}")
        return predict(self.regressor, self.prototype(bag).vector)


def _check_k(bags: Sequence[Bag], k: int) -> None:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    for b in bags:
        if b.n < k:
            raise ConfigError(f"k={k} exceeds the {b.n} instances of bag {b.bag_id}")


def vaemir_prototypes(bags: Sequence[Bag], vae: VaeModel, k: int, scores=None) -> list[Prototype]:
    """Prototypes for every bag; ``scores`` may carry precomputed anomaly scores."""
    _check_k(bags, k)
    if scores is None:
        scores = [anomaly_scores(vae, b.instances) for b in bags]
    return [vaemir_prototype(b, s, k) for b, s in zip(bags, scores)]


def vaemir_fit(
    bags: Sequence[Bag], vae: VaeModel, k: int, cfg: MirConfig | None = None, scores=None
) -> Vaemir:
    cfg = cfg or MirConfig()
    _check_training(bags)
    if bags[0].dim != vae.dim:
        raise ShapeError(f"VAE expects {vae.dim} features, bags have {bags[0].dim}")
    protos = vaemir_prototypes(bags, vae, k, scores)
    x = np.array([p.vector for p in protos])
    y = np.array([b.label for b in bags])
    return Vaemir(fit_arrays(x, y, cfg.regressor), vae, k)


def vaemir_predict(model: Vaemir, bag: Bag) -> float:
    return model.predict(bag)


# -- dispatch --------------------------------------------------------------


def fit_method(
    method: str,
    bags: Sequence[Bag],
    cfg: MirConfig | None = None,
    *,
    vae: VaeModel | None = None,
    k: int | None = None,
    cluster_seed: int = 0,
):
    """Fit one of :data:`METHODS`; the result has ``predict(bag) -> float``."""
    cfg = cfg or MirConfig()
    if method == "instance":
        return instance_mir_fit(bags, cfg)
    if method == "mean":
        return mean_fit(bags, cfg)
    if method == "prime":
        return prime_mir_fit(bags, cfg)
    if method == "cluster":
        return cluster_mir_fit(bags, cfg, rng=cluster_seed)
    if method == "vaemir":
        if vae is None or k is None:
            raise ConfigError("vaemir needs a trained VAE and k")
        return vaemir_fit(bags, vae, k, cfg)
    raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def predict_bags(model, bags: Sequence[Bag]) -> np.ndarray:
    return np.array([model.predict(b) for b in bags])
