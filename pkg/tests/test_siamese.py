import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigsiam import nn, siamese
from sigsiam.compressor import TrainingPair, make_pairs
from sigsiam.config import RunConfig
from sigsiam.errors import SchemaError
from sigsiam.siamese import (
    LossWeights,
    SiameseHead,
    VerificationOutput,
    cosine_similarity,
    multitask_loss,
    pair_loss,
    train_siamese,
    verification_accuracy,
    verification_forward,
)

from .gradcheck import central_difference

vec4 = arrays(float, 4, elements=st.floats(-10, 10, allow_nan=False))


def fixed_head():
    """fc1 is the 2x2 identity; cls_head scores v0 - v1."""
    return SiameseHead(
        nn.DenseLayer(np.eye(2), np.zeros(2), "identity"),
        nn.DenseLayer([[1.0, -1.0]], [0.0], "sigmoid"),
    )


def pair(y_i, y_j):
    return TrainingPair(np.zeros(2), np.zeros(2), y_i, y_j, int(y_i == y_j))


class TestCosine:
    def test_examples(self):
        assert cosine_similarity([1, 0, 0, 0], [1, 0, 0, 0]) == 1.0
        assert cosine_similarity([1, 0, 0, 0], [0, 1, 0, 0]) == 0.0
        assert cosine_similarity([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(20 / 30, rel=1e-15)

    def test_zero_norm(self):
        assert cosine_similarity(np.zeros(4), [1, 2, 3, 4]) == 0.0
        assert cosine_similarity([1e-13, 0, 0, 0], [1, 0, 0, 0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_batched(self):
        a = np.array([[1.0, 0.0], [0.0, 2.0]])
        b = np.array([[2.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(cosine_similarity(a, b), [1.0, 0.0])

    @settings(max_examples=100, deadline=None)
    @given(vec4, vec4, st.floats(0.01, 100))
    def test_properties(self, u, v, lam):
        s = cosine_similarity(u, v)
        assert s == cosine_similarity(v, u)
        assert -1.0 <= s <= 1.0
        if np.linalg.norm(u) > 1e-6 and np.linalg.norm(v) > 1e-6:
            assert cosine_similarity(lam * u, v) == pytest.approx(s, abs=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        ga, gb = siamese.cosine_similarity_grad(a, b)
        num_a = central_difference(lambda: float(np.sum(cosine_similarity(a, b))), a)
        num_b = central_difference(lambda: float(np.sum(cosine_similarity(a, b))), b)
        np.testing.assert_allclose(ga, num_a, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(gb, num_b, rtol=1e-6, atol=1e-9)


class TestForward:
    def test_hand_computed(self):
        # v_i = (1, 0), v_j = (1, 1): cos = 1/sqrt(2); scores 1 and 0
        out = verification_forward(fixed_head(), np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert out.similarity == pytest.approx(1 / math.sqrt(2), rel=1e-15)
        assert out.prob_i == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
        assert out.prob_j == 0.5

    def test_identical_channels(self):
        head = SiameseHead.initialise(16, 4, np.random.default_rng(0))
        c = np.random.default_rng(1).random(16)
        out = verification_forward(head, c, c)
        assert out.similarity == pytest.approx(1.0, abs=1e-15)
        assert out.prob_i == out.prob_j

    def test_swap(self):
        head = SiameseHead.initialise(16, 4, np.random.default_rng(0))
        rng = np.random.default_rng(2)
        a, b = rng.random(16), rng.random(16)
        fwd, rev = verification_forward(head, a, b), verification_forward(head, b, a)
        assert fwd.similarity == rev.similarity
        assert (fwd.prob_i, fwd.prob_j) == (rev.prob_j, rev.prob_i)

    def test_dimension_mismatch(self):
        head = SiameseHead.initialise(16, 4, np.random.default_rng(0))
        with pytest.raises(SchemaError):
            verification_forward(head, np.ones(15), np.ones(16))


class TestMultitaskLoss:
    def test_perfect_same_pair(self):
        out = VerificationOutput(1.0, 1.0, 1.0)
        assert multitask_loss(out, pair(1, 1), LossWeights()) == pytest.approx(0.0, abs=1e-6)

    def test_documented_value(self):
        # y_ij = 0, mapped similarity 0.8 (cosine 0.6), perfect branches
        out = VerificationOutput(0.6, 1.0, 0.0)
        loss = multitask_loss(out, pair(1, 0), LossWeights(1.0, 2.0))
        assert loss == pytest.approx(-(0.8**2) * math.log(0.2), abs=1e-6)
        assert loss == pytest.approx(1.0301, abs=1e-4)

    def test_gamma_zero_is_cross_entropy(self):
        out = VerificationOutput(0.2, 0.5, 0.5)
        ver = multitask_loss(out, pair(1, 1), LossWeights(1.0, 0.0)) - 2 * math.log(2)
        assert ver == pytest.approx(-math.log(0.6), rel=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = VerificationOutput(rng.uniform(-1, 1), rng.random(), rng.random())
            assert multitask_loss(out, pair(int(rng.integers(2)), int(rng.integers(2))), LossWeights()) >= 0

    @pytest.mark.parametrize("bad", [{"alpha": 0.0}, {"gamma": -1.0}])
    def test_invalid_weights(self, bad):
        with pytest.raises(SchemaError):
            LossWeights(**bad)


class TestGradients:
    @pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0])
    @pytest.mark.parametrize("seed", range(4))
    def test_batch_gradient(self, gamma, seed):
        rng = np.random.default_rng(seed)
        head = SiameseHead.initialise(16, 4, rng)
        c_i, c_j = rng.random((6, 16)), rng.random((6, 16))
        y_i, y_j = rng.integers(0, 2, 6).astype(float), rng.integers(0, 2, 6).astype(float)
        y_ij = (y_i == y_j).astype(float)
        w = LossWeights(1.3, gamma)

        def loss():
            return siamese._batch_loss_and_grads(head, c_i, c_j, y_i, y_j, y_ij, w)[0]

        _, grads, _ = siamese._batch_loss_and_grads(head, c_i, c_j, y_i, y_j, y_ij, w)
        for layer, (gw, gb) in zip((head.fc1, head.cls_head), grads.params):
            np.testing.assert_allclose(gw, central_difference(loss, layer.weights), rtol=1e-5, atol=1e-8)
            np.testing.assert_allclose(gb, central_difference(loss, layer.biases), rtol=1e-5, atol=1e-8)

    def test_batch_loss_matches_per_pair(self):
        rng = np.random.default_rng(3)
        head = SiameseHead.initialise(16, 4, rng)
        codes = rng.random((5, 16))
        pairs = make_pairs(codes, [1, 0, 0, 1, 0])
        w = LossWeights()
        per_pair = [
            multitask_loss(verification_forward(head, p.b_i, p.b_j), p, w) for p in pairs
        ]
        assert pair_loss(head, codes, pairs, w) == pytest.approx(np.mean(per_pair), rel=1e-12)


class TestTraining:
    CFG = RunConfig(siamese_epochs=30, batch_size=16, learning_rate=1e-2)

    @staticmethod
    def separable_codes(n=20, seed=0):
        rng = np.random.default_rng(seed)
        labels = np.arange(n) % 2
        codes = rng.random((n, 16)) * 0.2
        codes[labels == 1, :8] += 1.0
        codes[labels == 0, 8:] += 1.0
        return codes, labels

    def test_separable_reaches_full_accuracy(self):
        codes, labels = self.separable_codes()
        pairs = make_pairs(codes, labels)
        head, history = train_siamese(codes, pairs, self.CFG, np.random.default_rng(0))
        assert verification_accuracy(head, codes, pairs) == 1.0
        assert history["epochs"][-1] < history["initial"]

    def test_codes_untouched(self):
        codes, labels = self.separable_codes()
        before = codes.copy()
        train_siamese(codes, make_pairs(codes, labels), self.CFG, np.random.default_rng(0))
        assert np.array_equal(codes, before)

    def test_deterministic(self):
        codes, labels = self.separable_codes(seed=1)
        pairs = make_pairs(codes, labels)
        a, _ = train_siamese(codes, pairs, self.CFG, np.random.default_rng(4))
        b, _ = train_siamese(codes, pairs, self.CFG, np.random.default_rng(4))
        assert np.array_equal(a.fc1.weights, b.fc1.weights)
        assert np.array_equal(a.cls_head.weights, b.cls_head.weights)

    def test_code_count_mismatch(self):
        codes, labels = self.separable_codes()
        with pytest.raises(SchemaError):
            train_siamese(codes[:-1], make_pairs(codes, labels), self.CFG, np.random.default_rng(0))
