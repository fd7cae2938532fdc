"""Synthetic county-like bags with known mixed-pixel contamination.

Generative story for bag ``b`` in year index ``t``:

* latent crop signal ``s_b ~ N(drift * t * 1, I)`` of size ``signal_dim``;
* pure pixel ``A @ s_b + N(0, noise_sigma^2 I)`` for a fixed random ``A``;
* with probability ``contamination_rate`` a pixel is mixed instead:
  ``alpha * pure + (1 - alpha) * background`` where the background is drawn
  from ``N(shift, background_sigma^2 I)``;
* yield ``u + nonlinearity * u^2 / scale + N(0, label_noise^2)`` with
  ``u = w @ s_b`` and ``scale = |w|^2``.

Labels never depend on the mixed pixels. Global quantities (``A``, ``w``,
``shift``) come from one seed substream; each bag draws from its own
substream keyed by ``(seed, bag index)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import Bag
from .errors import ConfigError, DataError


@dataclass
class SynthConfig:
    n_bags_per_year: int = 100
    years: tuple[int, int] = (2008, 2011)  # inclusive
    instances_per_bag: int = 100
    feature_dim: int = 16
    contamination_rate: float = 0.2
    mixing_fraction: float = 0.6
    noise_sigma: float = 0.3
    year_drift: float = 0.25
    seed: int = 0
    signal_dim: int = 4
    label_noise: float = 0.05
    nonlinearity: float = 0.5
    background_shift: float = 2.0
    background_sigma: float = 8.0

    def __post_init__(self):
        self.years = (int(self.years[0]), int(self.years[1]))
        if self.n_bags_per_year < 1:
            raise ConfigError("n_bags_per_year must be >= 1")
        if self.years[1] < self.years[0]:
            raise ConfigError(f"year range {self.years} is empty")
        if self.instances_per_bag < 1:
            raise ConfigError("instances_per_bag must be >= 1")
        if not 1 <= self.feature_dim <= 159:
            raise ConfigError("feature_dim must lie in [1, 159]")
        if not 0.0 <= self.contamination_rate < 1.0:
            raise ConfigError("contamination_rate must lie in [0, 1)")
        if self.contamination_rate > 0 and self.instances_per_bag < 2:
            raise ConfigError("contaminated bags need at least 2 instances")
        if not 0.0 < self.mixing_fraction <= 1.0:
            raise ConfigError("mixing_fraction must lie in (0, 1]")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be positive")
        if self.signal_dim < 1:
            raise ConfigError("signal_dim must be >= 1")
        if self.label_noise < 0 or self.background_sigma < 0:
            raise ConfigError("label_noise and background_sigma must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def year_list(self) -> list[int]:
        return list(range(self.years[0], self.years[1] + 1))


@dataclass
class GroundTruth:
    mixing_matrix: np.ndarray  # A, (D, signal_dim)
    coefficients: np.ndarray  # w, (signal_dim,)
    background_shift: np.ndarray  # (D,)
    signals: dict[str, np.ndarray]  # bag_id -> s_b
    flags: dict[str, np.ndarray]  # bag_id -> per-instance anomaly flags

    @property
    def flag_rate(self) -> float:
        total = sum(f.size for f in self.flags.values())
        return float(sum(int(f.sum()) for f in self.flags.values()) / total) if total else 0.0

    def to_dict(self, cfg: SynthConfig | None = None) -> dict:
        out = {
            "mixing_matrix": self.mixing_matrix.tolist(),
            "coefficients": self.coefficients.tolist(),
            "background_shift": self.background_shift.tolist(),
            "flag_rate": self.flag_rate,
            "bags": [
                {"bag_id": k, "signal": self.signals[k].tolist(), "anomaly_flags": self.flags[k].tolist()}
                for k in self.signals
            ],
        }
        if cfg is not None:
            out = {"config": asdict(cfg), **out}
        return out

    def to_json(self, cfg: SynthConfig | None = None) -> str:
        return json.dumps(self.to_dict(cfg))


def _global_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))


def _bag_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, index])))


def generate(cfg: SynthConfig) -> tuple[list[Bag], GroundTruth]:
    g = _global_rng(cfg.seed)
    D, S, N = cfg.feature_dim, cfg.signal_dim, cfg.instances_per_bag
    A = g.standard_normal((D, S)) / np.sqrt(S)
    w = g.standard_normal(S)
    shift = cfg.background_shift * g.standard_normal(D)
    scale = max(float(w @ w), 1e-12)

    bags, signals, flags = [], {}, {}
    index = 0
    for t, year in enumerate(cfg.year_list):
        for j in range(cfg.n_bags_per_year):
            r = _bag_rng(cfg.seed, index)
            s = cfg.year_drift * t + r.standard_normal(S)
            pure = s @ A.T + cfg.noise_sigma * r.standard_normal((N, D))
            mixed = r.random(N) < cfg.contamination_rate
            background = shift + cfg.background_sigma * r.standard_normal((N, D))
            a = cfg.mixing_fraction
            x = np.where(mixed[:, None], a * pure + (1.0 - a) * background, pure)
            u = float(w @ s)
            label = u + cfg.nonlinearity * u * u / scale + cfg.label_noise * r.standard_normal()
            bag_id = f"y{year}-b{j:04d}"
            bags.append(Bag(bag_id, year, x, label, mixed))
            signals[bag_id], flags[bag_id] = s, mixed
            index += 1
    return bags, GroundTruth(A, w, shift, signals, flags)


def oracle_prototype(bag: Bag, truth: GroundTruth | None = None) -> np.ndarray:
    """Mean of the bag's true inliers, the best an ideal detector could do."""
    flags = bag.anomaly_flags
    if flags is None and truth is not None:
        flags = truth.flags.get(bag.bag_id)
    if flags is None:
        raise DataError(f"bag {bag.bag_id} carries no anomaly flags")
    inliers = ~np.asarray(flags, dtype=bool)
    if not inliers.any():
        raise DataError(f"bag {bag.bag_id} has no inlier instances")
    return bag.instances[inliers].mean(axis=0)
