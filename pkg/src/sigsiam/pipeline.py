"""Per-fold model fitting and the cross-validation harness.

Per fold: assemble features, fit median thresholds on the training subjects,
binarise, pair the training subjects, train the compressor hierarchically,
train the Siamese head on the frozen codes, build the reference bank, and
vote on every held-out subject.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compressor import AutoencoderStack, compress, make_pairs, train_hierarchical
from .config import RunConfig
from .errors import StratificationError
from .features import (
    BinarizationThresholds,
    FeatureLayout,
    MinMaxScaling,
    SubjectRecord,
    assemble_features,
    binarize,
    fit_minmax,
    fit_thresholds,
)
from .importance import input_importance
from .inference import MetricsReport, ReferenceBank, Verdict, compute_metrics, stratified_folds, vote
from .siamese import SiameseHead, train_siamese

log = logging.getLogger(__name__)


def feature_columns(layout: FeatureLayout, config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Kept column indices of the full layout, and a mask of kept columns forced to zero."""
    keep = np.ones(layout.dim, dtype=bool)
    zero = np.zeros(layout.dim, dtype=bool)
    if config.has("no_ps_shrink"):
        keep &= ~layout.ps_mask
    if config.has("no_ps"):
        zero |= layout.ps_mask
    if config.has("no_gender"):
        zero |= layout.gender_mask
    active = np.flatnonzero(keep)
    return active, zero[active]


@dataclass
class TrainedPipeline:
    config: RunConfig
    layout: FeatureLayout
    active: np.ndarray
    zeroed: np.ndarray
    preprocessor: BinarizationThresholds | MinMaxScaling
    stack: AutoencoderStack | None
    head: SiameseHead
    bank: ReferenceBank
    history: dict = field(default_factory=dict, repr=False)

    def features(self, records: Sequence[SubjectRecord]) -> np.ndarray:
        x = assemble_features(records, self.layout)[:, self.active]
        x[:, self.zeroed] = 0.0
        return x

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.preprocessor, BinarizationThresholds):
            return binarize(x, self.preprocessor)
        return self.preprocessor.transform(x)

    def codes(self, b: np.ndarray) -> np.ndarray:
        return b if self.stack is None else compress(self.stack, b)

    def predict(self, records: Sequence[SubjectRecord]) -> list[Verdict]:
        b = self.preprocess(self.features(records))
        c = self.codes(b)
        v = self.head.similarity_features(c)
        basis = c if self.bank.weighting == "compressed" else b
        return [vote(basis[k], v[k], self.bank) for k in range(len(records))]

    def input_importance(self) -> np.ndarray | None:
        """Importance over the full feature layout (dropped columns are 0)."""
        if self.stack is None:
            return None
        full = np.zeros(self.layout.dim)
        full[self.active] = input_importance(self.stack)
        return full


def fit_pipeline(
    train: Sequence[SubjectRecord], config: RunConfig, rng: np.random.Generator
) -> TrainedPipeline:
    layout = FeatureLayout(config.cortical_level, config.volume_level)
    active, zeroed = feature_columns(layout, config)
    x = assemble_features(train, layout)[:, active]
    x[:, zeroed] = 0.0
    labels = np.array([r.is_asd for r in train], dtype=int)

    if config.has("no_binarization"):
        pre: BinarizationThresholds | MinMaxScaling = fit_minmax(x)
        b = pre.transform(x)
    else:
        pre = fit_thresholds(x)
        b = binarize(x, pre)

    pairs = make_pairs(b, labels)
    history: dict = {}
    if config.has("no_ae"):
        stack = None
        codes = b
    else:
        stack, history["compressor"] = train_hierarchical(pairs, config, rng)
        codes = compress(stack, b)
    head, history["siamese"] = train_siamese(codes, pairs, config, rng)

    if config.has("no_weight"):
        weighting, basis = "uniform", b
    elif config.has("comp_weight"):
        weighting, basis = "compressed", codes
    else:
        weighting, basis = "binary", b
    bank = ReferenceBank(
        tuple(r.subject_id for r in train), basis, head.similarity_features(codes), labels, weighting
    )
    return TrainedPipeline(config, layout, active, zeroed, pre, stack, head, bank, history)


@dataclass(frozen=True)
class AuditRow:
    subject_id: str
    fold: int
    s_a: float
    s_n: float
    predicted: str
    actual: str


@dataclass
class FoldResult:
    fold: int
    test_index: np.ndarray
    metrics: MetricsReport
    audit: list[AuditRow]
    pipeline: TrainedPipeline


@dataclass
class CrossValidationResult:
    config: RunConfig
    pooled: MetricsReport
    folds: list[FoldResult]

    @property
    def audit(self) -> list[AuditRow]:
        return [row for f in self.folds for row in f.audit]


def fold_rng(seed: int, fold: int) -> np.random.Generator:
    return np.random.default_rng([seed, fold])


def _run_fold(args) -> FoldResult:
    cohort, test_index, fold, config = args
    test_set = set(test_index.tolist())
    train = [r for k, r in enumerate(cohort) if k not in test_set]
    test = [cohort[k] for k in test_index]
    pipe = fit_pipeline(train, config, fold_rng(config.seed, fold))
    verdicts = pipe.predict(test)
    audit = [
        AuditRow(r.subject_id, fold, v.s_a, v.s_n, v.predicted, r.label) for r, v in zip(test, verdicts)
    ]
    metrics = compute_metrics((row.predicted, row.actual) for row in audit)
    log.info("fold %d: acc=%.3f sen=%.3f spe=%.3f", fold, metrics.accuracy, metrics.sensitivity, metrics.specificity)
    return FoldResult(fold, test_index, metrics, audit, pipe)


def run_cross_validation(cohort: Sequence[SubjectRecord], config: RunConfig) -> CrossValidationResult:
    """Stratified K-fold evaluation; pooled metrics come from all held-out verdicts."""
    labels = [int(r.is_asd) for r in cohort]
    if len({r.subject_id for r in cohort}) != len(cohort):
        raise StratificationError("subject ids must be unique")
    folds = stratified_folds(labels, config.folds, config.seed)
    tasks = [(list(cohort), test, f, config) for f, test in enumerate(folds)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    results.sort(key=lambda r: r.fold)
    pooled = compute_metrics(
        (row.predicted, row.actual) for r in results for row in r.audit
    )
    return CrossValidationResult(config, pooled, results)
