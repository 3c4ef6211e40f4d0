"""Multi-task Siamese verification head.

A shared linear layer (FC1) maps each channel's compressed code to a
similarity feature ``v``.  The verification output is the cosine similarity
of the two features; a shared sigmoid head classifies each feature on its
own.  Training minimises focal verification loss plus the two branch
cross-entropies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .compressor import PairSet, TrainingPair, _make_optimizer, _Plateau
from .errors import SchemaError

NORM_EPS = 1e-12


def cosine_similarity(v_i: np.ndarray, v_j: np.ndarray) -> np.ndarray | float:
    """Cosine similarity along the last axis; 0 when either norm is below 1e-12."""
    a = np.asarray(v_i, dtype=float)
    b = np.asarray(v_j, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise SchemaError(f"length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    dot = np.sum(a * b, axis=-1)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    out = np.where(ok, dot / np.where(ok, na * nb, 1.0), 0.0)
    out = np.clip(out, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def cosine_similarity_grad(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise d cos / d a and d cos / d b for batches ``(n, k)``."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    ok = (na >= NORM_EPS) & (nb >= NORM_EPS)
    na_s = np.where(ok, na, 1.0)
    nb_s = np.where(ok, nb, 1.0)
    cos = np.sum(a * b, axis=1, keepdims=True) / (na_s * nb_s)
    ga = b / (na_s * nb_s) - cos * a / na_s**2
    gb = a / (na_s * nb_s) - cos * b / nb_s**2
    return np.where(ok, ga, 0.0), np.where(ok, gb, 0.0)


def similarity_to_probability(s):
    """Affine map of a cosine in [-1, 1] onto [0, 1]."""
    return (np.asarray(s, dtype=float) + 1.0) / 2.0


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise SchemaError("alpha must be positive")
        if self.gamma < 0:
            raise SchemaError("gamma must be >= 0")


@dataclass
class SiameseHead:
    fc1: nn.DenseLayer  # code -> similarity feature, linear
    cls_head: nn.DenseLayer  # similarity feature -> P(ASD), sigmoid

    @classmethod
    def initialise(cls, in_dim: int, sim_dim: int, rng: np.random.Generator) -> "SiameseHead":
        return cls(
            nn.DenseLayer.xavier(in_dim, sim_dim, "identity", rng),
            nn.DenseLayer.xavier(sim_dim, 1, "sigmoid", rng),
        )

    @property
    def in_dim(self) -> int:
        return self.fc1.in_dim

    def similarity_features(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape[-1] != self.in_dim:
            raise SchemaError(f"input has {c.shape[-1]} features, head expects {self.in_dim}")
        return self.fc1(c)

    def network(self) -> nn.DenseNetwork:
        return nn.DenseNetwork([self.fc1, self.cls_head])


@dataclass(frozen=True)
class VerificationOutput:
    similarity: np.ndarray | float  # y'_ij in [-1, 1]
    prob_i: np.ndarray | float  # y'_i
    prob_j: np.ndarray | float  # y'_j


def verification_forward(head: SiameseHead, c_i: np.ndarray, c_j: np.ndarray) -> VerificationOutput:
    v_i = head.similarity_features(c_i)
    v_j = head.similarity_features(c_j)
    p_i = head.cls_head(v_i)[..., 0]
    p_j = head.cls_head(v_j)[..., 0]
    sim = cosine_similarity(v_i, v_j)
    if np.ndim(p_i) == 0:
        p_i, p_j = float(p_i), float(p_j)
    return VerificationOutput(sim, p_i, p_j)


def multitask_loss(outputs: VerificationOutput, pair: TrainingPair, weights: LossWeights) -> float:
    """Focal verification loss on the mapped similarity plus both branch cross-entropies."""
    l_ver = nn.focal_loss(
        similarity_to_probability(outputs.similarity), pair.y_ij, weights.alpha, weights.gamma
    )
    l_cls = nn.cross_entropy_loss(outputs.prob_i, pair.y_i) + nn.cross_entropy_loss(
        outputs.prob_j, pair.y_j
    )
    return float(l_ver + l_cls)


def _batch_loss_and_grads(
    head: SiameseHead,
    c_i: np.ndarray,
    c_j: np.ndarray,
    y_i: np.ndarray,
    y_j: np.ndarray,
    y_ij: np.ndarray,
    weights: LossWeights,
) -> tuple[float, nn.Gradients, nn.DenseNetwork]:
    """Mean multitask loss over a batch, its gradients w.r.t. fc1 and cls_head,
    and the network those gradients line up with."""
    n = c_i.shape[0]
    net = head.network()
    fc1_net = nn.DenseNetwork([head.fc1])
    cls_net = nn.DenseNetwork([head.cls_head])

    v_i, cache_vi = nn.forward(fc1_net, c_i)
    v_j, cache_vj = nn.forward(fc1_net, c_j)
    p_i, cache_pi = nn.forward(cls_net, v_i)
    p_j, cache_pj = nn.forward(cls_net, v_j)
    sim = cosine_similarity(v_i, v_j)
    prob = similarity_to_probability(sim)

    loss = (
        nn.focal_loss(prob, y_ij, weights.alpha, weights.gamma)
        + nn.cross_entropy_loss(p_i[:, 0], y_i)
        + nn.cross_entropy_loss(p_j[:, 0], y_j)
    )
    d_prob = nn.focal_loss_grad(prob, y_ij, weights.alpha, weights.gamma) / n
    d_sim = 0.5 * d_prob
    g_cos_i, g_cos_j = cosine_similarity_grad(v_i, v_j)

    g_pi = nn.backward(cls_net, cache_pi, (nn.cross_entropy_grad(p_i[:, 0], y_i) / n)[:, None])
    g_pj = nn.backward(cls_net, cache_pj, (nn.cross_entropy_grad(p_j[:, 0], y_j) / n)[:, None])
    d_vi = d_sim[:, None] * g_cos_i + g_pi.inputs
    d_vj = d_sim[:, None] * g_cos_j + g_pj.inputs
    g_vi = nn.backward(fc1_net, cache_vi, d_vi, input_grad=False)
    g_vj = nn.backward(fc1_net, cache_vj, d_vj, input_grad=False)

    fc1_w = g_vi.params[0][0] + g_vj.params[0][0]
    fc1_b = g_vi.params[0][1] + g_vj.params[0][1]
    cls_w = g_pi.params[0][0] + g_pj.params[0][0]
    cls_b = g_pi.params[0][1] + g_pj.params[0][1]
    grads = nn.Gradients([(fc1_w, fc1_b), (cls_w, cls_b)], None)
    return float(np.mean(loss)), grads, net


def pair_loss(head: SiameseHead, codes: np.ndarray, pairs: PairSet, weights: LossWeights) -> float:
    """Mean multitask loss over every pair in ``pairs`` (codes indexed like pairs.features)."""
    lab = pairs.labels.astype(float)
    loss, _, _ = _batch_loss_and_grads(
        head, codes[pairs.idx_i], codes[pairs.idx_j], lab[pairs.idx_i], lab[pairs.idx_j], pairs.same, weights
    )
    return loss


def verification_accuracy(head: SiameseHead, codes: np.ndarray, pairs: PairSet) -> float:
    """Fraction of pairs whose same/different call (cosine > 0) matches y_ij."""
    sim = cosine_similarity(head.similarity_features(codes[pairs.idx_i]), head.similarity_features(codes[pairs.idx_j]))
    return float(np.mean((sim > 0).astype(float) == pairs.same))


def train_siamese(
    codes: np.ndarray, pairs: PairSet, config, rng: np.random.Generator
) -> tuple[SiameseHead, dict]:
    """Fit a fresh head on fixed per-subject codes.

    ``codes[k]`` is the compressor output for subject ``k`` of ``pairs``;
    the compressor itself is never touched here.
    """
    codes = np.asarray(codes, dtype=float)
    if codes.shape[0] != pairs.features.shape[0]:
        raise SchemaError("need one code per subject in the pair set")
    if len(pairs) == 0:
        raise SchemaError("no training pairs")
    weights = LossWeights(config.alpha, config.gamma)
    head = SiameseHead.initialise(codes.shape[1], config.sim_dim, rng)
    opt = _make_optimizer(config)
    plateau = _Plateau(config.patience, "siamese head")
    lab = pairs.labels.astype(float)
    same = pairs.same
    history = {"initial": pair_loss(head, codes, pairs, weights), "epochs": []}
    n_pairs = len(pairs)
    for _ in range(config.siamese_epochs):
        order = rng.permutation(n_pairs)
        total = 0.0
        for start in range(0, n_pairs, config.batch_size):
            b = order[start : start + config.batch_size]
            ii, jj = pairs.idx_i[b], pairs.idx_j[b]
            loss, grads, net = _batch_loss_and_grads(
                head, codes[ii], codes[jj], lab[ii], lab[jj], same[b], weights
            )
            total += loss * b.size
            nn.step(net, grads, opt)
        history["epochs"].append(total / n_pairs)
        plateau.update(history["epochs"][-1])
    return head, history
