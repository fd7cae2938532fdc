"""Dense feed-forward networks with hand-written backprop and Adam.

All parameters of a :class:`Network` live in one flat float64 buffer
(``net.params``); each layer's ``weights``/``biases`` are views into it. That
keeps the optimizer a handful of vector ops regardless of depth.

Inputs are either a single vector ``(in_dim,)`` or a batch ``(B, in_dim)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; same seed gives the same stream on every platform."""
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str = RELU

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"weights must be a non-empty matrix, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"biases shape {self.biases.shape} does not match out_dim {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Trace:
    """Cached activations of one forward pass, consumed by ``backward``."""

    net_id: int
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    squeeze: bool


class Network:
    """Ordered stack of dense layers sharing one flat parameter buffer."""

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].out_dim != layers[i].in_dim:
                raise ShapeError(
                    f"layer {i} expects in_dim {layers[i].in_dim} but layer {i - 1} "
                    f"produces {layers[i - 1].out_dim}"
                )
        sizes = [l.weights.size + l.biases.size for l in layers]
        self.params = np.empty(sum(sizes), dtype=np.float64)
        self.layers: list[DenseLayer] = []
        offset = 0
        for layer in layers:
            w_end = offset + layer.weights.size
            b_end = w_end + layer.biases.size
            w = self.params[offset:w_end].reshape(layer.weights.shape)
            b = self.params[w_end:b_end]
            w[...] = layer.weights
            b[...] = layer.biases
            self.layers.append(DenseLayer(w, b, layer.activation))
            offset = b_end
        # matches the flat layout: for each layer, (weight slice, bias slice)
        self._slices = []
        offset = 0
        for layer in self.layers:
            w_end = offset + layer.weights.size
            b_end = w_end + layer.biases.size
            self._slices.append((slice(offset, w_end), slice(w_end, b_end)))
            offset = b_end

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [l.out_dim for l in self.layers]

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(
                f"layer 0 expects input dimension {self.in_dim}, got shape {np.shape(x)}"
            )
        return x, squeeze

    def forward(self, x) -> np.ndarray:
        """Pure forward pass; returns the output of the last layer."""
        a, squeeze = self._check_input(x)
        for layer in self.layers:
            a = a @ layer.weights.T + layer.biases
            if layer.activation == RELU:
                a = np.maximum(a, 0.0)
        return a[0] if squeeze else a

    def forward_trace(self, x) -> tuple[np.ndarray, Trace]:
        """Forward pass that also returns the cache needed by :meth:`backward`."""
        a, squeeze = self._check_input(x)
        inputs, pre = [], []
        for layer in self.layers:
            inputs.append(a)
            z = a @ layer.weights.T + layer.biases
            pre.append(z)
            a = np.maximum(z, 0.0) if layer.activation == RELU else z
        trace = Trace(id(self), inputs, pre, squeeze)
        return (a[0] if squeeze else a), trace

    def backward(self, trace: Trace | None, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Chain rule through a cached forward pass.

        Returns ``(grad_params, grad_input)`` where ``grad_params`` is laid out
        like ``self.params`` and gradients are summed over the batch rows.
        """
        if trace is None or trace.net_id != id(self):
            raise ShapeError("backward called without a forward trace from this network")
        g = np.asarray(upstream, dtype=np.float64)
        if trace.squeeze:
            g = g[None, :]
        if g.shape != trace.pre[-1].shape:
            raise ShapeError(
                f"upstream gradient shape {np.shape(upstream)} does not match output "
                f"shape {trace.pre[-1].shape}"
            )
        grads = np.empty_like(self.params)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == RELU:
                g = g * (trace.pre[i] > 0.0)
            w_sl, b_sl = self._slices[i]
            grads[w_sl] = (g.T @ trace.inputs[i]).ravel()
            grads[b_sl] = g.sum(axis=0)
            g = g @ layer.weights
        return grads, (g[0] if trace.squeeze else g)

    def copy(self) -> "Network":
        return Network([DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers])

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "in": l.in_dim,
                    "out": l.out_dim,
                    "activation": l.activation,
                    "weights": [float(v) for v in l.weights.ravel()],
                    "biases": [float(v) for v in l.biases],
                }
                for l in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        layers = []
        for i, entry in enumerate(data["layers"]):
            n_in, n_out = int(entry["in"]), int(entry["out"])
            w = np.asarray(entry["weights"], dtype=np.float64)
            b = np.asarray(entry["biases"], dtype=np.float64)
            if w.size != n_in * n_out or b.size != n_out:
                raise ShapeError(f"layer {i}: weight/bias sizes do not match in={n_in}, out={n_out}")
            layers.append(DenseLayer(w.reshape(n_out, n_in), b, entry["activation"]))
        return cls(layers)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


def init_network(
    layer_dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator
) -> Network:
    """Glorot-uniform weights, zero biases.

    ``layer_dims`` lists every width including input, so ``[2, 3]`` is a
    single 2->3 layer and ``activations`` has ``len(layer_dims) - 1`` entries.
    """
    if len(layer_dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {list(layer_dims)}")
    if len(activations) != len(layer_dims) - 1:
        raise ConfigError(
            f"{len(layer_dims) - 1} layers but {len(activations)} activations given"
        )
    if any(int(d) < 1 for d in layer_dims):
        raise ConfigError(f"layer dims must be >= 1, got {list(layer_dims)}")
    layers = []
    for n_in, n_out, act in zip(layer_dims[:-1], layer_dims[1:], activations):
        a = math.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-a, a, size=(n_out, n_in))
        layers.append(DenseLayer(w, np.zeros(n_out), act))
    return Network(layers)


def mlp(in_dim: int, hidden: Sequence[int], out_dim: int, rng: np.random.Generator) -> Network:
    """ReLU hidden layers with an identity output head."""
    dims = [in_dim, *hidden, out_dim]
    acts = [RELU] * len(hidden) + [IDENTITY]
    return init_network(dims, acts, rng)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.step_count < 0:
            raise ConfigError("step_count must be >= 0")


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"grads shape {grads.shape} does not match params shape {params.shape}")
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    if m.shape != params.shape or v.shape != params.shape:
        raise ShapeError("optimizer moments are shaped differently from params")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = b1 * m + (1.0 - b1) * grads
    v = b2 * v + (1.0 - b2) * (grads * grads)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(state.learning_rate, b1, b2, state.epsilon, t, m, v)
    return new_params, new_state


def numerical_gradient(f, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. a flat array.

    ``params`` is perturbed in place and restored, so it can be a network's
    own parameter buffer.
    """
    grad = np.empty_like(params)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        fp = f()
        params[i] = old - h
        fm = f()
        params[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max componentwise ``|a-b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
