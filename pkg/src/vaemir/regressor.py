"""Two-hidden-layer MLP regressor shared by every bag-representation method."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .nn import AdamState, Network, adam_step, mlp

HIDDEN = (128, 64)
STD_FLOOR = 1e-8


@dataclass
class RegressorTrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    hidden_dims: tuple[int, ...] = HIDDEN

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class MlpRegressor:
    network: Network
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: float
    target_std: float
    seed: int = 0
    loss_trace: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.network.out_dim != 1:
            raise ShapeError(f"regressor output must be scalar, got {self.network.out_dim}")
        if np.any(self.input_std <= 0) or self.target_std <= 0:
            raise ShapeError("standardization scales must be positive")

    @property
    def dim(self) -> int:
        return self.network.in_dim

    def predict(self, x) -> np.ndarray | float:
        """Prediction for one vector (float) or a batch of rows (array)."""
        return predict(self, x)

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "input_mean": [float(v) for v in self.input_mean],
            "input_std": [float(v) for v in self.input_std],
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpRegressor":
        return cls(
            network=Network.from_dict(data["network"]),
            input_mean=np.asarray(data["input_mean"], dtype=np.float64),
            input_std=np.asarray(data["input_std"], dtype=np.float64),
            target_mean=float(data["target_mean"]),
            target_std=float(data["target_std"]),
            seed=int(data.get("seed", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MlpRegressor":
        return cls.from_dict(json.loads(text))


def mse_loss_and_grad(net: Network, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error of ``net`` on a batch and its parameter gradient."""
    out, trace = net.forward_trace(x)
    resid = out[:, 0] - y
    loss = float(np.mean(resid * resid))
    grads, _ = net.backward(trace, (2.0 / y.size) * resid[:, None])
    return loss, grads


def fit_arrays(x, y, cfg: RegressorTrainConfig) -> MlpRegressor:
    """Train on an ``(n, D)`` input matrix and ``(n,)`` targets."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"inputs {x.shape} and targets {y.shape} do not line up")
    n = x.shape[0]
    if n < 2:
        raise ConfigError(f"need at least 2 training pairs, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ShapeError("training data contain non-finite values")

    in_mean = x.mean(axis=0)
    in_std = np.maximum(x.std(axis=0), STD_FLOOR)
    t_mean = float(y.mean())
    t_std = max(float(y.std()), STD_FLOOR)
    xs = (x - in_mean) / in_std
    ys = (y - t_mean) / t_std

    init_ss, shuffle_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    net = mlp(x.shape[1], cfg.hidden_dims, 1, np.random.Generator(np.random.PCG64(init_ss)))
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    state = AdamState(learning_rate=cfg.learning_rate)

    trace = []
    for epoch in range(cfg.epochs):
        idx = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = idx[start : start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = mse_loss_and_grad(net, xs[rows], ys[rows])
                params, state = adam_step(net.params, grads, state)
            if not (math.isfinite(loss) and np.isfinite(params).all()):
                raise NumericalError(f"regressor loss became non-finite in epoch {epoch}")
            net.params[:] = params
            total += loss * rows.size
        trace.append(total / n)
    return MlpRegressor(net, in_mean, in_std, t_mean, t_std, cfg.seed, trace)


def fit(pairs, cfg: RegressorTrainConfig) -> MlpRegressor:
    """Train on a sequence of ``(vector, label)`` pairs."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ConfigError(f"need at least 2 training pairs, got {len(pairs)}")
    dims = {len(p[0]) for p in pairs}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent input dimensions {sorted(dims)}")
    x = np.array([p[0] for p in pairs], dtype=np.float64)
    y = np.array([p[1] for p in pairs], dtype=np.float64)
    return fit_arrays(x, y, cfg)


def predict(model: MlpRegressor, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ShapeError(f"regressor expects {model.dim} features, got {x.shape[-1]}")
    out = model.network.forward((x - model.input_mean) / model.input_std)
    y = out[..., 0] * model.target_std + model.target_mean
    return float(y) if x.ndim == 1 else y


def training_mse(model: MlpRegressor, x, y) -> float:
    resid = predict(model, np.atleast_2d(x)) - np.asarray(y, dtype=np.float64)
    return float(np.mean(resid * resid))
