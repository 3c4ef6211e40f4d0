"""Small dense-network engine with hand-written backpropagation.

Batches are row-major: an input batch has shape ``(n, in_dim)``.  A single
1-D vector is accepted wherever a batch is and treated as ``n = 1``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractError, SchemaError

PROB_EPS = 1e-7
ACTIVATIONS = ("sigmoid", "relu", "identity")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return sigmoid(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    return np.ones_like(z)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "identity"
    frozen: bool = False

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float, ndmin=2)
        self.biases = np.array(self.biases, dtype=float).ravel()
        if self.activation not in ACTIVATIONS:
            raise SchemaError(f"unknown activation {self.activation!r}")
        if self.biases.shape != (self.weights.shape[0],):
            raise SchemaError(
                f"bias length {self.biases.size} does not match {self.weights.shape[0]} outputs"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise SchemaError("layer parameters must be finite")

    @classmethod
    def xavier(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "DenseLayer":
        limit = np.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _activate(self.activation, x @ self.weights.T + self.biases)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation, self.frozen)


@dataclass
class LayerCache:
    inputs: np.ndarray
    pre: np.ndarray
    post: np.ndarray


@dataclass
class ForwardCache:
    layers: list[LayerCache]
    network_id: int
    version: int
    squeeze: bool


@dataclass
class Gradients:
    """Parameter gradients per layer (``None`` for frozen layers) plus input gradient."""

    params: list[tuple[np.ndarray, np.ndarray] | None]
    inputs: np.ndarray | None


_network_ids = itertools.count()


@dataclass
class DenseNetwork:
    layers: list[DenseLayer]
    version: int = field(default=0, compare=False)
    _id: int = field(default_factory=lambda: next(_network_ids), repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise SchemaError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise SchemaError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @classmethod
    def build(
        cls, sizes: list[int], activations: list[str], rng: np.random.Generator
    ) -> "DenseNetwork":
        if len(activations) != len(sizes) - 1:
            raise SchemaError("need one activation per layer")
        return cls(
            [DenseLayer.xavier(a, b, act, rng) for a, b, act in zip(sizes, sizes[1:], activations)]
        )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def mark_updated(self) -> None:
        self.version += 1

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def forward(net: DenseNetwork, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != net.in_dim:
        raise SchemaError(f"input has {x.shape[-1]} features, network expects {net.in_dim}")
    caches = []
    for layer in net.layers:
        z = h @ layer.weights.T + layer.biases
        a = _activate(layer.activation, z)
        caches.append(LayerCache(h, z, a))
        h = a
    out = h[0] if squeeze else h
    return out, ForwardCache(caches, net._id, net.version, squeeze)


def backward(
    net: DenseNetwork, cache: ForwardCache, loss_grad: np.ndarray, input_grad: bool = True
) -> Gradients:
    """Gradients of a scalar loss given dLoss/dOutput for the cached forward pass.

    ``input_grad=False`` skips the gradient w.r.t. the network input
    (``Gradients.inputs`` is then ``None``), saving one matrix product.
    """
    if cache.network_id != net._id or cache.version != net.version:
        raise ContractError("forward cache is stale: the network changed since it was computed")
    g = np.asarray(loss_grad, dtype=float)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.layers[-1].post.shape:
        raise SchemaError(f"loss gradient shape {g.shape} != output shape {cache.layers[-1].post.shape}")
    params: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer, lc = net.layers[idx], cache.layers[idx]
        dz = g * _activation_grad(layer.activation, lc.pre, lc.post)
        if not layer.frozen:
            params[idx] = (dz.T @ lc.inputs, dz.sum(axis=0))
        if idx == 0 and not input_grad:
            return Gradients(params, None)
        g = dz @ layer.weights
    return Gradients(params, g[0] if cache.squeeze else g)


# --- losses ----------------------------------------------------------------------

def _clamp(p):
    return np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(1, -1) if x.ndim <= 1 else x


def mse_loss(pred_i, pred_j, target_i, target_j) -> float:
    """Paired reconstruction loss: summed squared error of both members over batch size.

    Rows are batch items.  A 1-D argument is a batch of one.
    """
    pi, pj, ti, tj = (_as_batch(a) for a in (pred_i, pred_j, target_i, target_j))
    if not (pi.shape == pj.shape == ti.shape == tj.shape):
        raise SchemaError("prediction and target shapes must all match")
    n = pi.shape[0]
    return float((np.sum((ti - pi) ** 2) + np.sum((tj - pj) ** 2)) / n)


def mse_loss_grad(pred_i, pred_j, target_i, target_j) -> tuple[np.ndarray, np.ndarray]:
    pi, pj, ti, tj = (_as_batch(a) for a in (pred_i, pred_j, target_i, target_j))
    n = pi.shape[0]
    return 2.0 * (pi - ti) / n, 2.0 * (pj - tj) / n


def cross_entropy_loss(prob, label):
    p = _clamp(prob)
    y = np.asarray(label, dtype=float)
    out = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(out) if out.ndim == 0 else out


def cross_entropy_grad(prob, label):
    """d CE / d prob; zero where the clamp is active."""
    raw = np.asarray(prob, dtype=float)
    p = _clamp(raw)
    y = np.asarray(label, dtype=float)
    g = -(y / p) + (1.0 - y) / (1.0 - p)
    return np.where(raw == p, g, 0.0)


def _focal_target(y_pred, y_label):
    y = np.asarray(y_label, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    return np.where(y == 1, p, 1.0 - p), np.where(y == 1, 1.0, -1.0)


def focal_loss(y_pred, y_label, alpha: float = 1.0, gamma: float = 2.0):
    """-alpha (1 - y_hat)^gamma log(y_hat), y_hat = y_pred for label 1 else 1 - y_pred."""
    y_hat, _ = _focal_target(y_pred, y_label)
    y_hat = _clamp(y_hat)
    out = -alpha * (1.0 - y_hat) ** gamma * np.log(y_hat)
    return float(out) if out.ndim == 0 else out


def focal_loss_grad(y_pred, y_label, alpha: float = 1.0, gamma: float = 2.0):
    """d focal / d y_pred; zero where the clamp is active."""
    raw, sign = _focal_target(y_pred, y_label)
    y_hat = _clamp(raw)
    log_y = np.log(y_hat)
    one_minus = 1.0 - y_hat
    if gamma == 0:
        d_hat = -alpha / y_hat
    else:
        d_hat = alpha * (gamma * one_minus ** (gamma - 1.0) * log_y - one_minus**gamma / y_hat)
    return np.where(raw == y_hat, sign * d_hat, 0.0)


# --- optimisation -----------------------------------------------------------------

@dataclass
class OptimizerState:
    rule: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.rule not in ("sgd", "adam"):
            raise SchemaError(f"unknown optimizer rule {self.rule!r}")
        if self.learning_rate <= 0:
            raise SchemaError("learning rate must be positive")


def step(net: DenseNetwork, grads: Gradients, opt: OptimizerState) -> None:
    """Apply one in-place update to every unfrozen layer with a gradient."""
    if len(grads.params) != len(net.layers):
        raise SchemaError("gradient list does not match network depth")
    opt.t += 1
    for idx, (layer, g) in enumerate(zip(net.layers, grads.params)):
        if g is None or layer.frozen:
            continue
        gw, gb = g
        if gw.shape != layer.weights.shape or gb.shape != layer.biases.shape:
            raise SchemaError(f"gradient shape mismatch in layer {idx}")
        for key, param, grad in ((("w", idx), layer.weights, gw), (("b", idx), layer.biases, gb)):
            if opt.rule == "sgd":
                param -= opt.learning_rate * grad
                continue
            if key not in opt.moments:
                opt.moments[key] = (np.zeros_like(param), np.zeros_like(param), np.empty_like(param))
            m, v, buf = opt.moments[key]
            m *= opt.beta1
            np.multiply(grad, 1.0 - opt.beta1, out=buf)
            m += buf
            v *= opt.beta2
            np.multiply(grad, grad, out=buf)
            buf *= 1.0 - opt.beta2
            v += buf
            # bias-corrected moments: m / (1 - b1^t), v / (1 - b2^t)
            np.divide(v, 1.0 - opt.beta2**opt.t, out=buf)
            np.sqrt(buf, out=buf)
            buf += opt.eps
            np.divide(m, buf, out=buf)
            buf *= opt.learning_rate / (1.0 - opt.beta1**opt.t)
            param -= buf
    net.mark_updated()
