import itertools

import numpy as np
import pytest

from sigsiam.errors import InsufficientDataError, SchemaError, StratificationError
from sigsiam.inference import (
    ReferenceBank,
    compute_metrics,
    metrics_from_counts,
    stratified_folds,
    vote,
)


def bank_from(weights, sims, labels):
    """Bank whose weight and similarity cosines to the probe are exactly ``weights`` and ``sims``.

    The probe is e0 in both spaces; a reference with cosine c is (c, sqrt(1 - c^2)).
    """
    def unit(c):
        c = np.asarray(c, dtype=float)
        return np.column_stack([c, np.sqrt(1 - c**2)])

    n = len(labels)
    return ReferenceBank(
        tuple(f"R{k}" for k in range(n)), unit(weights), unit(sims), np.asarray(labels), "binary"
    )


PROBE = np.array([1.0, 0.0])


class TestVote:
    def test_documented_example(self):
        bank = bank_from([0.5, 1.0, 1.0], [0.8, 0.6, 0.7], [1, 1, 0])
        verdict = vote(PROBE, PROBE, bank)
        assert verdict.s_a == pytest.approx(0.5, rel=1e-12)
        assert verdict.s_n == pytest.approx(0.7, rel=1e-12)
        assert verdict.predicted == "NC"

    def test_clear_asd(self):
        bank = bank_from([1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0])
        verdict = vote(PROBE, PROBE, bank)
        assert (verdict.predicted, verdict.s_a, verdict.s_n) == ("ASD", 1.0, 0.0)

    def test_unit_weights_give_plain_means(self):
        sims = [0.9, -0.2, 0.4, 0.1, 0.3]
        labels = [1, 1, 0, 0, 0]
        verdict = vote(PROBE, PROBE, bank_from([1.0] * 5, sims, labels))
        assert verdict.s_a == pytest.approx(np.mean(sims[:2]))
        assert verdict.s_n == pytest.approx(np.mean(sims[2:]))

    def test_uniform_weighting_ignores_basis(self):
        bank = bank_from([0.1, 0.9, 0.5], [0.8, 0.6, 0.65], [1, 1, 0])
        uniform = ReferenceBank(bank.subject_ids, bank.weight_basis, bank.sim_features, bank.labels, "uniform")
        assert vote(PROBE, PROBE, uniform).predicted == "ASD"
        assert vote(PROBE, PROBE, bank).predicted == "NC"

    def test_tie_goes_to_nc(self):
        verdict = vote(PROBE, PROBE, bank_from([1.0, 1.0], [0.5, 0.5], [1, 0]))
        assert verdict.s_a == verdict.s_n
        assert verdict.predicted == "NC"

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        b = (rng.random((8, 30)) > 0.5).astype(float)
        v = rng.normal(size=(8, 4))
        labels = np.array([1, 1, 1, 0, 0, 0, 0, 0])
        ids = tuple(map(str, range(8)))
        probe_b, probe_v = (rng.random(30) > 0.5).astype(float), rng.normal(size=4)
        base = vote(probe_b, probe_v, ReferenceBank(ids, b, v, labels))
        scaled = vote(probe_b, probe_v, ReferenceBank(ids, b, 7.5 * v, labels))
        assert scaled.predicted == base.predicted
        assert scaled.s_a == pytest.approx(base.s_a, rel=1e-12)
        assert scaled.s_n == pytest.approx(base.s_n, rel=1e-12)

    def test_binary_weights_are_non_negative(self):
        rng = np.random.default_rng(1)
        b = (rng.random((6, 20)) > 0.5).astype(float)
        bank = ReferenceBank(tuple("abcdef"), b, rng.normal(size=(6, 4)), np.array([1, 1, 0, 0, 0, 0]))
        verdict = vote((rng.random(20) > 0.5).astype(float), rng.normal(size=4), bank)
        assert np.all(verdict.weights >= 0)

    def test_negative_weight_rejected(self):
        bank = ReferenceBank(("a", "b"), np.array([[-1.0, 0.0], [1.0, 0.0]]), np.eye(2), np.array([1, 0]))
        with pytest.raises(SchemaError):
            vote(PROBE, PROBE, bank)

    def test_empty_partition(self):
        bank = bank_from([1.0, 1.0], [0.5, 0.5], [0, 0])
        with pytest.raises(InsufficientDataError):
            vote(PROBE, PROBE, bank)

    def test_bank_shape_checked(self):
        with pytest.raises(SchemaError):
            ReferenceBank(("a",), np.zeros((2, 3)), np.zeros((1, 4)), np.array([1]))


class TestMetrics:
    def test_table_row(self):
        m = metrics_from_counts(tp=19, fp=16, tn=111, fn=11)
        assert m.rounded() == {"f1": 0.585, "accuracy": 0.828, "sensitivity": 0.633, "specificity": 0.874}

    def test_all_correct(self):
        m = compute_metrics([("ASD", "ASD"), ("NC", "NC"), ("NC", "NC")])
        assert (m.accuracy, m.sensitivity, m.specificity, m.f1) == (1.0, 1.0, 1.0, 1.0)
        assert m.flags == ()

    def test_no_positive_predictions(self):
        m = compute_metrics([("NC", "ASD")] * 3 + [("NC", "NC")] * 7)
        assert m.sensitivity == 0.0 and m.f1 == 0.0 and m.specificity == 1.0
        assert "no_positive_predictions" in m.flags and "f1_undefined" in m.flags

    def test_consistency(self):
        for tp, fp, tn, fn in itertools.product(range(4), repeat=4):
            if tp + fp + tn + fn == 0:
                continue
            m = metrics_from_counts(tp, fp, tn, fn)
            assert m.accuracy == pytest.approx((tp + tn) / m.n)
            if tp + fn:
                assert round(m.sensitivity * (tp + fn)) == tp
            if m.precision + m.sensitivity:
                assert m.f1 == pytest.approx(2 * m.precision * m.sensitivity / (m.precision + m.sensitivity))

    def test_boolean_labels(self):
        assert compute_metrics([(1, 1), (0, 1)]).tp == 1

    def test_unknown_label(self):
        with pytest.raises(SchemaError):
            compute_metrics([("autism", "ASD")])

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            compute_metrics([])


class TestFolds:
    LABELS = [1] * 30 + [0] * 127

    def test_cohort_split(self):
        folds = stratified_folds(self.LABELS, 10, seed=0)
        sizes = sorted(len(f) for f in folds)
        assert set(sizes) <= {15, 16}
        y = np.array(self.LABELS)
        asd = [int(y[f].sum()) for f in folds]
        assert min(asd) >= 1 and max(asd) - min(asd) <= 1

    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_partition(self, k):
        folds = stratified_folds(self.LABELS, k, seed=3)
        everything = np.concatenate(folds)
        assert sorted(everything.tolist()) == list(range(157))

    def test_deterministic(self):
        a = stratified_folds(self.LABELS, 10, seed=5)
        b = stratified_folds(self.LABELS, 10, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = stratified_folds(self.LABELS, 10, seed=6)
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_leave_one_out(self):
        folds = stratified_folds([1, 1, 1, 0, 0, 0], 6, seed=0)
        assert sorted(len(f) for f in folds) == [1] * 6

    @pytest.mark.parametrize(
        "labels, k", [([1, 0, 0, 0], 2), ([0, 0, 0], 2), ([1, 1, 0, 0], 5), ([1, 1, 0, 0], 1)]
    )
    def test_errors(self, labels, k):
        with pytest.raises(StratificationError):
            stratified_folds(labels, k, seed=0)
