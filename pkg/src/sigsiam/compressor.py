"""Dual-channel stacked autoencoder trained in two hierarchical stages.

Both channel members go through one shared parameter set, so the paired
network is a single autoencoder applied to ``b_i`` and ``b_j``.  Stage 1
fits the outer layers (1 and 4) as a shallow autoencoder; stage 2 freezes
them and fits the inserted inner layers (2 and 3) against the same
end-to-end reconstruction loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import nn
from .errors import ConvergenceWarning, InsufficientDataError, SchemaError, StateError

STAGES = ("outer_training", "inner_training", "trained")


@dataclass(frozen=True)
class TrainingPair:
    b_i: np.ndarray
    b_j: np.ndarray
    y_i: int
    y_j: int
    y_ij: int


@dataclass(frozen=True)
class PairSet:
    """All unordered subject pairs, stored as index arrays into ``features``.

    Indexing yields ``TrainingPair`` objects; training loops use the arrays.
    """

    features: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,) 1 = ASD
    idx_i: np.ndarray
    idx_j: np.ndarray

    @property
    def same(self) -> np.ndarray:
        return (self.labels[self.idx_i] == self.labels[self.idx_j]).astype(float)

    def __len__(self) -> int:
        return self.idx_i.size

    def __getitem__(self, k: int) -> TrainingPair:
        i, j = int(self.idx_i[k]), int(self.idx_j[k])
        yi, yj = int(self.labels[i]), int(self.labels[j])
        return TrainingPair(self.features[i], self.features[j], yi, yj, int(yi == yj))

    def __iter__(self) -> Iterator[TrainingPair]:
        return (self[k] for k in range(len(self)))


def make_pairs(features: np.ndarray | Sequence[np.ndarray], labels: Sequence[int]) -> PairSet:
    """Every unordered pair (i < j) once, sorted by (i, j)."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise SchemaError("features must be (N, D) with one label per row")
    if x.shape[0] < 2:
        raise InsufficientDataError("need at least 2 subjects to form pairs")
    ii, jj = np.triu_indices(x.shape[0], k=1)
    return PairSet(x, y, ii, jj)


@dataclass
class AutoencoderStack:
    layers: list[nn.DenseLayer]  # 1: in->hidden, 2: hidden->code, 3: code->hidden, 4: hidden->in
    stage: str = "outer_training"

    @classmethod
    def initialise(
        cls,
        in_dim: int,
        hidden_dim: int,
        code_dim: int,
        rng: np.random.Generator,
        hidden_activation: str = "relu",
        code_activation: str = "relu",
    ) -> "AutoencoderStack":
        return cls(
            [
                nn.DenseLayer.xavier(in_dim, hidden_dim, hidden_activation, rng),
                nn.DenseLayer.xavier(hidden_dim, code_dim, code_activation, rng),
                nn.DenseLayer.xavier(code_dim, hidden_dim, hidden_activation, rng),
                nn.DenseLayer.xavier(hidden_dim, in_dim, "sigmoid", rng),
            ]
        )

    @property
    def encoder(self) -> list[nn.DenseLayer]:
        return self.layers[:2]

    @property
    def decoder(self) -> list[nn.DenseLayer]:
        return self.layers[2:]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def code_dim(self) -> int:
        return self.layers[1].out_dim

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Full four-layer pass (or the outer two while stage 2 has not started)."""
        layers = self.layers if self.stage != "outer_training" else [self.layers[0], self.layers[3]]
        h = np.asarray(x, dtype=float)
        for layer in layers:
            h = layer(h)
        return h


def compress(stack: AutoencoderStack, b: np.ndarray) -> np.ndarray:
    """Encoder-only pass; works on one vector or a batch of rows."""
    if stack.stage != "trained":
        raise StateError(f"compressor is not trained (stage {stack.stage!r})")
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != stack.in_dim:
        raise SchemaError(f"input has {b.shape[-1]} features, compressor expects {stack.in_dim}")
    return stack.layers[1](stack.layers[0](b))


def reconstruction_error(stack: AutoencoderStack, x: np.ndarray) -> float:
    """Mean squared error per element."""
    x = np.asarray(x, dtype=float)
    return float(np.mean((stack.reconstruct(x) - x) ** 2))


def paired_reconstruction_loss(stack: AutoencoderStack, pairs: PairSet) -> float:
    """Pair-averaged paired reconstruction loss over the whole pair set."""
    recon = stack.reconstruct(pairs.features)
    per_subject = np.sum((recon - pairs.features) ** 2, axis=1)
    return float(np.mean(per_subject[pairs.idx_i] + per_subject[pairs.idx_j]))


def _make_optimizer(config) -> nn.OptimizerState:
    return nn.OptimizerState(
        rule=config.optimizer,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.adam_eps,
    )


def _batch_members(pairs: PairSet, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # a subject can occur several times in one batch of pairs; its summed
    # squared error is the single-row error times its multiplicity
    members = np.concatenate([pairs.idx_i[batch], pairs.idx_j[batch]])
    return np.unique(members, return_counts=True)


class _Plateau:
    def __init__(self, patience: int, what: str):
        self.patience = patience
        self.what = what
        self.best = np.inf
        self.stale = 0
        self.warned = False

    def update(self, loss: float) -> None:
        if loss < self.best:
            self.best, self.stale = loss, 0
            return
        self.stale += 1
        if self.stale >= self.patience and not self.warned:
            warnings.warn(
                f"{self.what}: loss has not decreased for {self.stale} epochs",
                ConvergenceWarning,
                stacklevel=3,
            )
            self.warned = True


def _run_stage(
    net: nn.DenseNetwork,
    inputs: np.ndarray,
    targets: np.ndarray,
    pairs: PairSet,
    epochs: int,
    config,
    rng: np.random.Generator,
    what: str,
    history: list[float],
) -> None:
    opt = _make_optimizer(config)
    plateau = _Plateau(config.patience, what)
    n_pairs = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        total = 0.0
        for start in range(0, n_pairs, config.batch_size):
            batch = order[start : start + config.batch_size]
            uniq, counts = _batch_members(pairs, batch)
            out, cache = nn.forward(net, inputs[uniq])
            resid = out - targets[uniq]
            weight = counts[:, None] / batch.size
            total += float(np.sum(weight * resid**2)) * batch.size
            grads = nn.backward(net, cache, 2.0 * weight * resid, input_grad=False)
            nn.step(net, grads, opt)
        epoch_loss = total / n_pairs
        history.append(epoch_loss)
        plateau.update(epoch_loss)


def train_hierarchical(
    pairs: PairSet, config, rng: np.random.Generator
) -> tuple[AutoencoderStack, dict]:
    """Two-stage training; returns the trained stack and per-epoch loss history.

    Stage 1 trains layers 1 and 4; stage 2 freezes them and trains layers 2
    and 3.  Both stages minimise the paired reconstruction loss
    ``(sum ||b_i - r_i||^2 + sum ||b_j - r_j||^2) / batch_size`` over shuffled
    pair batches.
    """
    if len(pairs) == 0:
        raise InsufficientDataError("no training pairs")
    x = pairs.features
    stack = AutoencoderStack.initialise(
        x.shape[1], config.hidden_dim, config.code_dim, rng, config.hidden_activation, config.code_activation
    )
    l1, l2, l3, l4 = stack.layers
    history: dict[str, list[float]] = {"outer": [], "inner": []}

    stack.stage = "outer_training"
    outer = nn.DenseNetwork([l1, l4])
    history["initial_outer"] = paired_reconstruction_loss(stack, pairs)
    _run_stage(outer, x, x, pairs, config.ae_outer_epochs, config, rng, "outer autoencoder", history["outer"])

    l1.frozen = l4.frozen = True
    stack.stage = "inner_training"
    history["initial_inner"] = paired_reconstruction_loss(stack, pairs)
    hidden = l1(x)  # layer 1 is frozen from here on
    inner = nn.DenseNetwork([l2, l3, l4])
    _run_stage(inner, hidden, x, pairs, config.ae_inner_epochs, config, rng, "inner autoencoder", history["inner"])

    l2.frozen = l3.frozen = True
    stack.stage = "trained"
    return stack, history
