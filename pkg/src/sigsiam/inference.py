"""Test-phase weighted voting, diagnostic metrics and stratified folds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError, SchemaError, StratificationError
from .siamese import cosine_similarity

WEIGHTINGS = ("binary", "compressed", "uniform")


@dataclass(frozen=True)
class ReferenceBank:
    """Training subjects used as voters.

    ``weight_basis`` holds the vectors whose cosine similarity to the test
    subject gives each voter's weight (binarised features by default,
    compressed codes for the ``compressed`` weighting).
    """

    subject_ids: tuple[str, ...]
    weight_basis: np.ndarray  # (N, D)
    sim_features: np.ndarray  # (N, k)
    labels: np.ndarray  # (N,) 1 = ASD, 0 = NC
    weighting: str = "binary"

    def __post_init__(self):
        n = len(self.subject_ids)
        if self.weight_basis.shape[0] != n or self.sim_features.shape[0] != n or self.labels.shape != (n,):
            raise SchemaError("bank arrays must have one row per subject")
        if self.weighting not in WEIGHTINGS:
            raise SchemaError(f"unknown weighting {self.weighting!r}")

    @property
    def asd_mask(self) -> np.ndarray:
        return self.labels == 1


@dataclass(frozen=True)
class Verdict:
    predicted: str
    s_a: float
    s_n: float
    weights: np.ndarray = field(repr=False)
    similarities: np.ndarray = field(repr=False)

    @property
    def is_asd(self) -> bool:
        return self.predicted == "ASD"


def vote(test_b: np.ndarray, test_v: np.ndarray, bank: ReferenceBank) -> Verdict:
    """Weighted mean similarity to the ASD and NC voters; larger score wins, ties go to NC.

    ``test_b`` lives in the same space as ``bank.weight_basis``; ``test_v``
    in the space of ``bank.sim_features``.
    """
    asd = bank.asd_mask
    if not asd.any() or asd.all():
        raise InsufficientDataError("reference bank needs at least one ASD and one NC subject")
    sims = cosine_similarity(np.asarray(test_v, dtype=float)[None, :], bank.sim_features)
    if bank.weighting == "uniform":
        weights = np.ones(len(bank.subject_ids))
    else:
        weights = cosine_similarity(np.asarray(test_b, dtype=float)[None, :], bank.weight_basis)
        if np.any(weights < -1e-12):
            raise SchemaError("negative voting weight: weight vectors must be non-negative")
    contrib = weights * sims
    s_a = float(contrib[asd].sum() / asd.sum())
    s_n = float(contrib[~asd].sum() / (~asd).sum())
    return Verdict("ASD" if s_a > s_n else "NC", s_a, s_n, weights, sims)


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    flags: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rounded(self, digits: int = 3) -> dict:
        return {k: round(getattr(self, k), digits) for k in ("f1", "accuracy", "sensitivity", "specificity")}

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy, "sensitivity": self.sensitivity,
            "specificity": self.specificity, "precision": self.precision,
            "f1": self.f1, "flags": list(self.flags),
        }


def _is_positive(label) -> bool:
    if isinstance(label, str):
        if label not in ("ASD", "NC"):
            raise SchemaError(f"unknown label {label!r}")
        return label == "ASD"
    return bool(label)


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    """ASD is the positive class.  Zero denominators give 0 and a flag."""
    flags = []

    def ratio(num, den, flag):
        if den == 0:
            flags.append(flag)
            return 0.0
        return num / den

    n = tp + fp + tn + fn
    if n == 0:
        raise InsufficientDataError("no predictions")
    accuracy = (tp + tn) / n
    sensitivity = ratio(tp, tp + fn, "no_positive_subjects")
    specificity = ratio(tn, tn + fp, "no_negative_subjects")
    precision = ratio(tp, tp + fp, "no_positive_predictions")
    if precision + sensitivity == 0:
        flags.append("f1_undefined")
        f1 = 0.0
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    return MetricsReport(tp, fp, tn, fn, accuracy, sensitivity, specificity, precision, f1, tuple(flags))


def compute_metrics(predictions: Iterable[tuple[object, object]]) -> MetricsReport:
    """Confusion counts and metrics from ``(predicted, actual)`` label pairs."""
    tp = fp = tn = fn = 0
    for predicted, actual in predictions:
        p, a = _is_positive(predicted), _is_positive(actual)
        if p and a:
            tp += 1
        elif p:
            fp += 1
        elif a:
            fn += 1
        else:
            tn += 1
    return metrics_from_counts(tp, fp, tn, fn)


def stratified_folds(labels: Sequence[int], k: int, seed: int) -> list[np.ndarray]:
    """Test indices of ``k`` folds preserving class ratio to within one subject.

    Each class is shuffled and dealt round-robin, the dealer continuing from
    where the previous class stopped so fold sizes also differ by at most
    one.  ``k`` equal to the cohort size gives leave-one-out.
    """
    y = np.asarray(labels, dtype=int)
    n = y.size
    if k < 2 or k > n:
        raise StratificationError(f"fold count {k} must lie in 2..{n}")
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2 or counts.min() < 2:
        raise StratificationError("need at least 2 subjects in each of the two classes")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for cls in classes[::-1]:  # positives (1) first
        members = rng.permutation(np.flatnonzero(y == cls))
        for idx in members:
            folds[cursor % k].append(int(idx))
            cursor += 1
    out = [np.array(sorted(f), dtype=int) for f in folds]
    for f, test in enumerate(out):
        train = np.setdiff1d(np.arange(n), test)
        if np.unique(y[train]).size < 2:
            raise StratificationError(f"fold {f} leaves a class with no training subjects")
    return out
