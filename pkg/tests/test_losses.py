import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from querydistill import losses
from querydistill.errors import DimMismatch, EmptyBatch, InvalidTemperature


def unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestAlignLoss:
    def test_identical_vectors_zero(self):
        v = np.array([0.6, 0.8])
        out = losses.align_loss(v, v)
        assert out.value == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(out.grad, 0.0, atol=1e-15)

    def test_antiparallel_two(self):
        v = np.array([0.0, 1.0])
        out = losses.align_loss(v, -v)
        assert out.value == pytest.approx(2.0, abs=1e-15)

    def test_orthogonal_one(self):
        out = losses.align_loss(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert out.value == pytest.approx(1.0, abs=1e-15)

    def test_batch_is_mean_of_pairs(self, rng):
        s = unit_rows(rng, 4, 6)
        t = unit_rows(rng, 4, 6)
        batch = losses.align_loss_batch(s, t)
        singles = [losses.align_loss(s[i], t[i]) for i in range(4)]
        assert batch.value == pytest.approx(np.mean([o.value for o in singles]), abs=1e-14)
        for i, o in enumerate(singles):
            np.testing.assert_allclose(batch.grad[i], o.grad / 4.0, atol=1e-14)

    def test_gradient_finite_difference(self, rng):
        s = unit_rows(rng, 3, 5)
        t = unit_rows(rng, 3, 5)
        out = losses.align_loss_batch(s, t)
        eps = 1e-6
        for idx in [(0, 0), (1, 3), (2, 4)]:
            pert = s.copy()
            pert[idx] += eps
            up = losses.align_loss_batch(pert, t).value
            pert[idx] -= 2 * eps
            down = losses.align_loss_batch(pert, t).value
            assert out.grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-6, abs=1e-10)

    def test_shape_errors(self):
        with pytest.raises(DimMismatch):
            losses.align_loss(np.zeros(3), np.zeros(4))
        with pytest.raises(EmptyBatch):
            losses.align_loss_batch(np.zeros((0, 3)), np.zeros((0, 3)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_value_in_zero_two(self, seed):
        r = np.random.default_rng(seed)
        out = losses.align_loss_batch(unit_rows(r, 3, 4), unit_rows(r, 3, 4))
        assert -1e-12 <= out.value <= 2.0 + 1e-12


class TestRankLoss:
    def test_frozen_swapped_distribution(self):
        # teacher p = softmax([1, 0]), student swapped; at tau=1 the KL is
        # p*1 + (1-p)*(-1) = 2*sigmoid(1) - 1 = tanh(1/2)
        docs = np.eye(2)
        out = losses.rank_loss(
            np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]]), docs,
            teacher_tau=1.0, student_tau=1.0,
        )
        assert out.value == pytest.approx(0.46211715726000974, abs=1e-15)

    def test_uniform_similarities_zero(self):
        # identical scores against every doc: both distributions uniform at
        # any temperature pair, so the KL vanishes
        docs = np.vstack([np.eye(3)[0], np.eye(3)[0], np.eye(3)[0]])
        q = np.array([[1.0, 0.0, 0.0]])
        out = losses.rank_loss(q, q, docs)
        assert abs(out.value) <= 1e-12

    def test_same_scores_different_temperatures_positive(self, rng):
        docs = unit_rows(rng, 6, 8)
        q = unit_rows(rng, 3, 8)
        out = losses.rank_loss(q, q, docs, teacher_tau=0.07, student_tau=0.05)
        assert out.value > 1e-6

    def test_matching_distributions_zero(self, rng):
        docs = unit_rows(rng, 5, 7)
        q = unit_rows(rng, 4, 7)
        out = losses.rank_loss(q, q, docs, teacher_tau=0.05, student_tau=0.05)
        assert abs(out.value) <= 1e-12

    def test_gradient_finite_difference(self, rng):
        docs = unit_rows(rng, 6, 5)
        s = unit_rows(rng, 3, 5)
        t = unit_rows(rng, 3, 5)
        out = losses.rank_loss(s, t, docs)
        eps = 1e-6
        for idx in [(0, 0), (1, 2), (2, 4)]:
            pert = s.copy()
            pert[idx] += eps
            up = losses.rank_loss(pert, t, docs).value
            pert[idx] -= 2 * eps
            down = losses.rank_loss(pert, t, docs).value
            assert out.grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-10)

    def test_temperature_validation(self, rng):
        docs = unit_rows(rng, 4, 3)
        q = unit_rows(rng, 2, 3)
        with pytest.raises(InvalidTemperature):
            losses.rank_loss(q, q, docs, teacher_tau=0.0)
        with pytest.raises(InvalidTemperature):
            losses.rank_loss(q, q, docs, student_tau=-1.0)

    def test_empty_batches(self):
        with pytest.raises(EmptyBatch):
            losses.rank_loss(np.zeros((0, 3)), np.zeros((0, 3)), np.eye(3))
        with pytest.raises(EmptyBatch):
            losses.rank_loss(np.ones((1, 3)), np.ones((1, 3)), np.zeros((0, 3)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_kl_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        docs = unit_rows(r, 5, 6)
        out = losses.rank_loss(unit_rows(r, 3, 6), unit_rows(r, 3, 6), docs)
        assert out.value >= -1e-12


class TestInfoNCE:
    def test_frozen_two_by_two(self):
        # diagonal sims 1, off-diagonal 0, tau=1: nll = -log(e / (e + 1))
        docs = np.eye(2)
        out = losses.infonce_loss(docs, docs, student_tau=1.0)
        assert out.value == pytest.approx(0.31326168751822286, abs=1e-15)

    def test_uniform_scores_log_batch(self):
        # queries orthogonal to every doc: uniform rows, loss = ln B exactly
        batch = 7
        q = np.tile(np.eye(3)[0], (batch, 1))
        docs = np.tile(np.eye(3)[1], (batch, 1))
        out = losses.infonce_loss(q, docs)
        assert out.value == pytest.approx(np.log(batch), abs=1e-9)

    def test_perfect_separation_large_batch(self):
        batch = 256
        eye = np.eye(batch)
        out = losses.infonce_loss(eye, eye, student_tau=0.05)
        expected = float(np.log1p((batch - 1) * np.exp(-1.0 / 0.05)))
        assert out.value == pytest.approx(expected, rel=1e-12)
        assert out.value < 1e-6

    def test_requires_square_scores(self, rng):
        with pytest.raises(DimMismatch):
            losses.infonce_loss(unit_rows(rng, 3, 4), unit_rows(rng, 5, 4))

    def test_temperature_validation(self):
        with pytest.raises(InvalidTemperature):
            losses.infonce_loss(np.eye(2), np.eye(2), student_tau=0.0)

    def test_gradient_finite_difference(self, rng):
        docs = unit_rows(rng, 4, 5)
        s = unit_rows(rng, 4, 5)
        out = losses.infonce_loss(s, docs)
        eps = 1e-6
        for idx in [(0, 1), (2, 0), (3, 4)]:
            pert = s.copy()
            pert[idx] += eps
            up = losses.infonce_loss(pert, docs).value
            pert[idx] -= 2 * eps
            down = losses.infonce_loss(pert, docs).value
            assert out.grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-10)


class TestCombined:
    def test_linearity(self, rng):
        docs = unit_rows(rng, 5, 6)
        s = unit_rows(rng, 4, 6)
        t = unit_rows(rng, 4, 6)
        a = losses.align_loss_batch(s, t)
        r = losses.rank_loss(s, t, docs)
        for wa, wr in [(1.0, 0.5), (0.5, 1.0), (1.0, 1.0), (2.0, 0.25)]:
            out, parts = losses.combined_loss(losses.ObjectiveWeights(wa, wr), s, t, docs)
            assert out.value == pytest.approx(wa * a.value + wr * r.value, abs=1e-12)
            np.testing.assert_allclose(out.grad, wa * a.grad + wr * r.grad, atol=1e-12)
            assert parts == {"align": a.value, "rank": r.value}

    def test_single_term_weights(self, rng):
        docs = unit_rows(rng, 4, 5)
        s = unit_rows(rng, 4, 5)
        t = unit_rows(rng, 4, 5)
        out, parts = losses.combined_loss(losses.ObjectiveWeights(1.0, 0.0), s, t, docs)
        assert set(parts) == {"align"}
        assert out.value == pytest.approx(losses.align_loss_batch(s, t).value, abs=1e-15)
        out, parts = losses.combined_loss(losses.ObjectiveWeights(0.0, 1.0), s, t, docs)
        assert set(parts) == {"rank"}

    def test_infonce_mode(self, rng):
        docs = unit_rows(rng, 4, 5)
        s = unit_rows(rng, 4, 5)
        t = unit_rows(rng, 4, 5)
        w = losses.ObjectiveWeights(0.0, 0.0, use_infonce=True)
        out, parts = losses.combined_loss(w, s, t, docs)
        assert set(parts) == {"infonce"}
        assert out.value == pytest.approx(losses.infonce_loss(s, docs).value, abs=1e-15)

    def test_no_active_terms_rejected(self, rng):
        docs = unit_rows(rng, 3, 4)
        s = unit_rows(rng, 3, 4)
        with pytest.raises(EmptyBatch):
            losses.combined_loss(losses.ObjectiveWeights(0.0, 0.0), s, s, docs)

    def test_empty_student_rejected(self):
        with pytest.raises(EmptyBatch):
            losses.combined_loss(
                losses.ObjectiveWeights(), np.zeros((0, 3)), np.zeros((0, 3)), np.eye(3)
            )


class TestObjectiveGrid:
    def test_six_entries_in_order(self):
        grid = losses.objective_grid()
        assert len(grid) == 6
        assert grid[0] == losses.ObjectiveWeights(1.0, 0.0)
        assert grid[-1].use_infonce
        pairs = [(w.align_weight, w.rank_weight) for w in grid[:5]]
        assert pairs == [(1.0, 0.0), (1.0, 0.5), (1.0, 1.0), (0.5, 1.0), (0.0, 1.0)]

    def test_labels_unique(self):
        labels = [w.label() for w in losses.objective_grid()]
        assert len(set(labels)) == 6
        assert "infonce" in labels
