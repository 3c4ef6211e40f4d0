import warnings

import numpy as np
import pytest

from sigsiam import compressor, nn
from sigsiam.compressor import (
    AutoencoderStack,
    compress,
    make_pairs,
    paired_reconstruction_loss,
    reconstruction_error,
    train_hierarchical,
)
from sigsiam.config import RunConfig
from sigsiam.errors import ConvergenceWarning, InsufficientDataError, SchemaError, StateError

SMALL = RunConfig(hidden_dim=12, code_dim=4, ae_outer_epochs=3, ae_inner_epochs=3, batch_size=16)


def binary_data(n, d, seed):
    return (np.random.default_rng(seed).random((n, d)) > 0.5).astype(float)


def low_rank_binary(n, d, rank, seed):
    """Binary rows whose columns are copies of ``rank`` latent bits."""
    rng = np.random.default_rng(seed)
    latent = (rng.random((n, rank)) > 0.5).astype(float)
    return latent[:, rng.integers(0, rank, d)]


class TestPairs:
    @pytest.mark.parametrize("n, expected", [(157, 12246), (141, 9870), (2, 1)])
    def test_counts(self, n, expected):
        pairs = make_pairs(np.zeros((n, 3)), np.zeros(n))
        assert len(pairs) == expected

    def test_order_and_uniqueness(self):
        pairs = make_pairs(np.zeros((5, 2)), [1, 0, 0, 1, 0])
        idx = list(zip(pairs.idx_i.tolist(), pairs.idx_j.tolist()))
        assert idx == sorted(idx)
        assert all(i < j for i, j in idx)
        assert len(set(idx)) == 10

    def test_same_label(self):
        x = np.arange(8.0).reshape(4, 2)
        pairs = make_pairs(x, [1, 1, 0, 0])
        assert pairs.same.tolist() == [1, 0, 0, 0, 0, 1]
        first = pairs[0]
        np.testing.assert_array_equal(first.b_i, x[0])
        assert (first.y_i, first.y_j, first.y_ij) == (1, 1, 1)
        assert all(p.y_ij == int(p.y_i == p.y_j) for p in pairs)

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            make_pairs(np.zeros((1, 3)), [0])

    def test_label_count_mismatch(self):
        with pytest.raises(SchemaError):
            make_pairs(np.zeros((3, 2)), [0, 1])


class TestBatchMembers:
    def test_dedup_matches_duplicated_rows(self):
        """Weighting unique rows by multiplicity gives the same gradient as repeating them."""
        rng = np.random.default_rng(0)
        x = binary_data(6, 10, 1)
        pairs = make_pairs(x, np.zeros(6))
        net = nn.DenseNetwork.build([10, 4, 10], ["relu", "sigmoid"], rng)
        batch = np.array([0, 1, 2, 5, 9])

        uniq, counts = compressor._batch_members(pairs, batch)
        out, cache = nn.forward(net, x[uniq])
        weight = counts[:, None] / batch.size
        fast = nn.backward(net, cache, 2 * weight * (out - x[uniq])).params

        bi, bj = x[pairs.idx_i[batch]], x[pairs.idx_j[batch]]
        oi, ci = nn.forward(net, bi)
        oj, cj = nn.forward(net, bj)
        gi, gj = nn.mse_loss_grad(oi, oj, bi, bj)
        slow_i = nn.backward(net, ci, gi).params
        slow_j = nn.backward(net, cj, gj).params
        for f, si, sj in zip(fast, slow_i, slow_j):
            np.testing.assert_allclose(f[0], si[0] + sj[0], rtol=1e-12, atol=1e-15)
            np.testing.assert_allclose(f[1], si[1] + sj[1], rtol=1e-12, atol=1e-15)


class TestHierarchicalTraining:
    def test_stage_one_layers_frozen(self, monkeypatch):
        snapshots = []
        real = compressor._run_stage

        def spy(net, *args, **kwargs):
            real(net, *args, **kwargs)
            snapshots.append([layer.copy() for layer in net.layers])

        monkeypatch.setattr(compressor, "_run_stage", spy)
        pairs = make_pairs(binary_data(12, 20, 0), np.arange(12) % 2)
        stack, _ = train_hierarchical(pairs, SMALL, np.random.default_rng(0))
        after_stage_one = snapshots[0]
        for snap, layer in zip(after_stage_one, (stack.layers[0], stack.layers[3])):
            assert np.array_equal(snap.weights, layer.weights)
            assert np.array_equal(snap.biases, layer.biases)
        # the inner layers did move
        assert not np.array_equal(snapshots[1][0].weights, after_stage_one[0].weights[:4])

    def test_stage_transitions(self):
        pairs = make_pairs(binary_data(6, 10, 0), [0, 1] * 3)
        stack, history = train_hierarchical(pairs, SMALL, np.random.default_rng(0))
        assert stack.stage == "trained"
        assert all(layer.frozen for layer in stack.layers)
        assert len(history["outer"]) == SMALL.ae_outer_epochs
        assert len(history["inner"]) == SMALL.ae_inner_epochs

    def test_repeated_vector_is_learnable(self):
        x = np.tile(binary_data(1, 30, 3), (8, 1))
        cfg = SMALL.with_overrides(learning_rate=1e-2, ae_outer_epochs=150, ae_inner_epochs=150)
        stack, _ = train_hierarchical(make_pairs(x, np.zeros(8)), cfg, np.random.default_rng(1))
        assert reconstruction_error(stack, x) < 1e-3

    def test_loss_decreases_on_cohort(self, small_cohort):
        from sigsiam.features import assemble_features, binarize, fit_thresholds

        x = assemble_features(small_cohort)
        b = binarize(x, fit_thresholds(x))
        pairs = make_pairs(b, [r.is_asd for r in small_cohort])
        stack, history = train_hierarchical(pairs, RunConfig(), np.random.default_rng(0))
        assert history["inner"][-1] < history["initial_inner"]
        assert history["outer"][-1] < history["initial_outer"]
        assert paired_reconstruction_loss(stack, pairs) < history["initial_outer"]

    def test_low_rank_reconstruction(self):
        # a training fold's worth of subjects with rank-16 structure, default budget
        x = low_rank_binary(141, 1265, 16, seed=4)
        pairs = make_pairs(x, np.arange(141) % 2)
        stack, _ = train_hierarchical(pairs, RunConfig(), np.random.default_rng(0))
        assert reconstruction_error(stack, x) <= 0.05

    def test_deterministic(self):
        pairs = make_pairs(binary_data(8, 15, 2), np.arange(8) % 2)
        a, _ = train_hierarchical(pairs, SMALL, np.random.default_rng(5))
        b, _ = train_hierarchical(pairs, SMALL, np.random.default_rng(5))
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights)

    def test_convergence_warning(self):
        plateau = compressor._Plateau(patience=2, what="test")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            for loss in (1.0, 0.9, 0.95, 0.91, 0.92, 0.93):
                plateau.update(loss)
        assert [w.category for w in caught] == [ConvergenceWarning]

    def test_empty_pairs(self):
        pairs = compressor.PairSet(np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int))
        with pytest.raises(InsufficientDataError):
            train_hierarchical(pairs, SMALL, np.random.default_rng(0))


@pytest.fixture(scope="module")
def trained():
    x = binary_data(10, 1265, 7)
    cfg = RunConfig(ae_outer_epochs=1, ae_inner_epochs=1)
    stack, _ = train_hierarchical(make_pairs(x, np.arange(10) % 2), cfg, np.random.default_rng(2))
    return stack, x


class TestCompress:
    def test_output_length(self, trained):
        stack, x = trained
        assert compress(stack, x[0]).shape == (16,)
        assert compress(stack, x).shape == (10, 16)

    def test_deterministic(self, trained):
        stack, x = trained
        assert np.array_equal(compress(stack, x[3]), compress(stack, x[3]))

    def test_channel_swap(self, trained):
        stack, x = trained
        # one parameter set serves both channels
        c1, c2 = compress(stack, x[1]), compress(stack, x[2])
        left, right = (compress(stack, v) for v in (x[2], x[1]))
        assert np.array_equal(left, c2) and np.array_equal(right, c1)

    def test_untrained(self):
        stack = AutoencoderStack.initialise(10, 4, 2, np.random.default_rng(0))
        with pytest.raises(StateError):
            compress(stack, np.zeros(10))

    def test_wrong_length(self, trained):
        with pytest.raises(SchemaError):
            compress(trained[0], np.zeros(12))


def test_paired_loss_channel_symmetry():
    stack = AutoencoderStack.initialise(6, 3, 2, np.random.default_rng(0))
    x = binary_data(4, 6, 9)
    fwd = make_pairs(x, np.zeros(4))
    rev = make_pairs(x[::-1], np.zeros(4))
    assert paired_reconstruction_loss(stack, fwd) == pytest.approx(paired_reconstruction_loss(stack, rev), rel=1e-12)
