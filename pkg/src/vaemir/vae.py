"""Variational autoencoder used as an instance-level anomaly scorer.

The encoder ends in a linear head of width ``2 * latent_dim``: the first half
is the mean, the second half the log-variance, so ``sigma = exp(logvar / 2)``.
Per-sample training loss is the KL term summed over latent dims plus the
Euclidean reconstruction distance; a batch loss averages over samples.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .nn import AdamState, Network, adam_step, mlp

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass
class VaeTrainConfig:
    epochs: int = 200
    batch_size: int = 64
    latent_dim: int = 8
    hidden_dims: tuple[int, ...] = (64, 32)
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        for name in ("epochs", "batch_size", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass
class VaeModel:
    encoder: Network
    decoder: Network
    latent_dim: int
    feature_mean: np.ndarray
    feature_std: np.ndarray

    def __post_init__(self):
        d = self.feature_mean.shape[0]
        if self.encoder.in_dim != d or self.decoder.out_dim != d or self.feature_std.shape != (d,):
            raise ShapeError(
                f"encoder in_dim {self.encoder.in_dim}, decoder out_dim {self.decoder.out_dim} "
                f"and feature stats ({d}) must agree"
            )
        if self.encoder.out_dim != 2 * self.latent_dim or self.decoder.in_dim != self.latent_dim:
            raise ShapeError("encoder head must be 2*latent_dim and decoder input latent_dim")
        if np.any(self.feature_std <= 0):
            raise ShapeError("feature_std must be strictly positive")

    @property
    def dim(self) -> int:
        return self.feature_mean.shape[0]

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VaeModel":
        return cls(
            encoder=Network.from_dict(data["encoder"]),
            decoder=Network.from_dict(data["decoder"]),
            latent_dim=int(data["latent_dim"]),
            feature_mean=np.asarray(data["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(data["feature_std"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "VaeModel":
        return cls.from_dict(json.loads(text))


def standardize(x, model: VaeModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ShapeError(f"expected {model.dim} features, got {x.shape[-1]}")
    return (x - model.feature_mean) / model.feature_std


def unstandardize(z, model: VaeModel) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) * model.feature_std + model.feature_mean


def reparameterize(mu, sigma, eps) -> np.ndarray:
    mu, sigma, eps = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, eps))
    if not (mu.shape == sigma.shape == eps.shape):
        raise ShapeError(f"mu {mu.shape}, sigma {sigma.shape}, eps {eps.shape} must match")
    if np.any(sigma < 0):
        raise ConfigError("sigma must be non-negative")
    return mu + eps * sigma


def latent_loss(mu, sigma) -> float:
    """KL divergence of N(mu, sigma^2) from N(0, 1), summed over dimensions."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu {mu.shape} and sigma {sigma.shape} must match")
    if np.any(sigma <= 0):
        raise ConfigError("sigma must be strictly positive")
    var = sigma * sigma
    return float(0.5 * np.sum(mu * mu + var - np.log(var) - 1.0))


def recon_loss(x, x_prime) -> float:
    """Euclidean distance between an input and its reconstruction."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ShapeError(f"x {x.shape} and x' {x_prime.shape} must match")
    if x.ndim == 1:
        return math.dist(x, x_prime)  # scaled internally, no underflow on tiny gaps
    return float(np.sqrt(np.sum((x - x_prime) ** 2)))


def total_loss(latent: float, recon: float) -> float:
    return latent + recon


def _kl_from_logvar(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    # same quantity as latent_loss, with log(sigma^2) taken straight from the head
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0, axis=1)


def batch_loss_and_grads(
    encoder: Network, decoder: Network, x: np.ndarray, eps: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean per-sample loss over a standardized batch, with exact gradients.

    ``eps`` is the ``(B, L)`` noise for the reparameterization; holding it
    fixed makes the loss a deterministic function of the parameters.
    Returns ``(loss, grad_encoder_params, grad_decoder_params)``.
    """
    n, latent = eps.shape
    h, enc_trace = encoder.forward_trace(x)
    mu, logvar = h[:, :latent], h[:, latent:]
    sigma = np.exp(0.5 * logvar)
    z = mu + eps * sigma
    x_rec, dec_trace = decoder.forward_trace(z)

    resid = x_rec - x
    dist = np.sqrt(np.sum(resid * resid, axis=1))
    kl = _kl_from_logvar(mu, logvar)
    loss = float(np.mean(kl + dist))

    safe = np.where(dist > 0.0, dist, 1.0)
    d_xrec = np.where(dist[:, None] > 0.0, resid / safe[:, None], 0.0) / n
    g_dec, d_z = decoder.backward(dec_trace, d_xrec)
    d_mu = d_z + mu / n
    d_logvar = d_z * eps * 0.5 * sigma + 0.5 * (np.exp(logvar) - 1.0) / n
    g_enc, _ = encoder.backward(enc_trace, np.concatenate([d_mu, d_logvar], axis=1))
    return loss, g_enc, g_dec


@dataclass
class VaeTrainResult:
    model: VaeModel
    epoch_losses: list[float] = field(default_factory=list)


def _as_matrix(instances) -> np.ndarray:
    x = np.asarray(instances, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"instances must form an (n, D) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("instances contain non-finite values")
    return x


def train_vae(instances, cfg: VaeTrainConfig, order: np.ndarray | None = None) -> VaeTrainResult:
    """Fit a VAE to every given instance with mini-batch Adam.

    ``order`` optionally fixes the visiting order: an ``(epochs, n)`` array
    of row indices per epoch. By default each epoch is a fresh permutation
    from a stream independent of the reparameterization noise.
    """
    x = _as_matrix(instances)
    n, d = x.shape
    if n < 2:
        raise ConfigError(f"need at least 2 instances to train a VAE, got {n}")
    if order is not None:
        order = np.asarray(order)
        if order.shape != (cfg.epochs, n):
            raise ShapeError(f"order must have shape {(cfg.epochs, n)}, got {order.shape}")

    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    xs = (x - mean) / std

    ss = np.random.SeedSequence(cfg.seed)
    init_ss, noise_ss, shuffle_ss = ss.spawn(3)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    noise_rng = np.random.Generator(np.random.PCG64(noise_ss))
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))

    L = cfg.latent_dim
    encoder = mlp(d, cfg.hidden_dims, 2 * L, init_rng)
    decoder = mlp(L, tuple(reversed(cfg.hidden_dims)), d, init_rng)
    n_enc = encoder.params.size
    params = np.concatenate([encoder.params, decoder.params])
    state = AdamState(learning_rate=cfg.learning_rate)

    losses = []
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        idx = order[epoch] if order is not None else shuffle_rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            rows = idx[start : start + bs]
            eps = noise_rng.standard_normal((rows.size, L))
            with np.errstate(over="ignore", invalid="ignore"):
                loss, g_enc, g_dec = batch_loss_and_grads(encoder, decoder, xs[rows], eps)
                params, state = adam_step(params, np.concatenate([g_enc, g_dec]), state)
            if not (math.isfinite(loss) and np.isfinite(params).all()):
                raise NumericalError(f"VAE loss became non-finite in epoch {epoch}")
            encoder.params[:] = params[:n_enc]
            decoder.params[:] = params[n_enc:]
            total += loss * rows.size
            count += rows.size
        losses.append(total / count)
        log.debug("vae epoch %d loss %.6f", epoch, losses[-1])

    model = VaeModel(encoder, decoder, L, mean, std)
    return VaeTrainResult(model, losses)


def reconstruct(model: VaeModel, x) -> np.ndarray:
    """Decode from the latent mean (no sampling); result is in standardized space."""
    xs = standardize(x, model)
    h = model.encoder.forward(xs)
    mu = h[..., : model.latent_dim]
    return model.decoder.forward(mu)


def anomaly_scores(model: VaeModel, x) -> np.ndarray:
    """Reconstruction distance in standardized space for each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xs = standardize(x, model)
    rec = reconstruct(model, x)
    return np.sqrt(np.sum((xs - rec) ** 2, axis=1))


def anomaly_score(model: VaeModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("anomaly_score takes a single vector; use anomaly_scores for batches")
    return float(anomaly_scores(model, x)[0])


def progress_ok(epoch_losses: Sequence[float]) -> bool:
    """True when the mean loss over the last 10% of epochs is <= the first 10%."""
    n = len(epoch_losses)
    if n == 0:
        return False
    w = max(1, n // 10)
    return float(np.mean(epoch_losses[-w:])) <= float(np.mean(epoch_losses[:w]))
