import numpy as np
import pytest

from promptfas.vecmath import (
    cosine_similarity,
    l2_distance,
    normalize,
    prototype,
    softmax_probs,
)


def random_rotation(dim, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q


class TestCosineSimilarity:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_identity_unit(self):
        v = normalize([3.0, 4.0, 12.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_hand_value(self):
        # dot = 4, each norm^2 = 5
        assert cosine_similarity([1, 2], [2, 1]) == pytest.approx(0.8, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.Generator(np.random.PCG64(3))
        a, b = rng.standard_normal(16), rng.standard_normal(16)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-15)

    def test_clamped(self):
        v = np.full(64, 0.125)
        assert -1.0 <= cosine_similarity(v, v) <= 1.0

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine_similarity([1, 2], [1, 2, 3])

    def test_zero_norm(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_similarity([0, 0], [1, 0])


class TestL2Distance:
    def test_identity(self):
        v = [1.5, -2.5, 0.0]
        assert l2_distance(v, v) == 0.0

    def test_three_four_five(self):
        assert l2_distance([0, 0], [3, 4]) == pytest.approx(5.0, abs=1e-12)

    def test_sqrt_two(self):
        assert l2_distance([1, 0], [0, 1]) == pytest.approx(np.sqrt(2.0), abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            l2_distance([1], [1, 2])


class TestNormalize:
    def test_hand_value(self):
        np.testing.assert_allclose(normalize([3, 4]), [0.6, 0.8], atol=1e-15)

    def test_idempotent_on_unit(self):
        v = normalize(np.arange(1.0, 9.0))
        np.testing.assert_allclose(normalize(v), v, atol=1e-15)

    def test_unit_norm_result(self):
        rng = np.random.Generator(np.random.PCG64(0))
        for _ in range(20):
            v = rng.standard_normal(33) * rng.uniform(1e-3, 1e3)
            assert abs(np.linalg.norm(normalize(v)) - 1.0) < 1e-12

    def test_zero_vector_errors(self):
        with pytest.raises(ValueError, match="zero"):
            normalize([0.0, 0.0])


class TestPrototype:
    def test_singleton(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(prototype([v]), v)

    def test_hand_mean(self):
        np.testing.assert_allclose(prototype([[1, 0], [0, 1]]), [0.5, 0.5], atol=1e-15)

    def test_opposites_cancel(self):
        v = np.array([0.3, -0.7, 2.0])
        np.testing.assert_allclose(prototype([v, -v]), [0, 0, 0], atol=1e-15)

    def test_copies_exact(self):
        v = np.array([0.1, 0.2, 0.7])
        np.testing.assert_array_equal(prototype([v] * 7), v)

    def test_not_renormalized(self):
        p = prototype([[1, 0], [0, 1]])
        assert np.linalg.norm(p) == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ValueError, match="empty"):
            prototype([])

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            prototype([[1, 2], [1, 2, 3]])


class TestSoftmaxProbs:
    def test_uniform_for_equal_sims(self):
        for tau in (0.01, 1.0, 17.0):
            np.testing.assert_allclose(softmax_probs([2, 2, 2], tau), [1 / 3] * 3, atol=1e-15)

    def test_two_way_hand_value(self):
        # 1/(1 + e^{-2})
        p = softmax_probs([1, -1], 1.0)
        assert p[0] == pytest.approx(0.8807970779778823, abs=1e-9)
        assert p[1] == pytest.approx(0.1192029220221177, abs=1e-9)

    def test_small_tau_no_overflow(self):
        p = softmax_probs([0.9, 0.1], 0.01)
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0, abs=1e-12)
        assert p[1] == pytest.approx(np.exp(-80.0), rel=1e-9)

    def test_extreme_scale_no_overflow(self):
        p = softmax_probs([1e4, -1e4], 1.0)
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0, abs=1e-12)

    def test_sums_to_one(self):
        rng = np.random.Generator(np.random.PCG64(9))
        for _ in range(50):
            s = rng.standard_normal(rng.integers(1, 9)) * 10
            assert abs(np.sum(softmax_probs(s, 0.37)) - 1.0) < 1e-12

    def test_nonpositive_tau_errors(self):
        with pytest.raises(ValueError, match="positive"):
            softmax_probs([1, 2], 0.0)


class TestInvariants:
    def test_rotation_invariance(self):
        rng = np.random.Generator(np.random.PCG64(11))
        for seed in range(10):
            q = random_rotation(24, seed)
            a, b = rng.standard_normal(24), rng.standard_normal(24)
            assert cosine_similarity(q @ a, q @ b) == pytest.approx(
                cosine_similarity(a, b), abs=1e-9
            )
            assert l2_distance(q @ a, q @ b) == pytest.approx(l2_distance(a, b), abs=1e-9)

    def test_unit_vector_distance_similarity_identity(self):
        rng = np.random.Generator(np.random.PCG64(13))
        for _ in range(50):
            a = normalize(rng.standard_normal(12))
            b = normalize(rng.standard_normal(12))
            lhs = l2_distance(a, b) ** 2
            rhs = 2.0 - 2.0 * cosine_similarity(a, b)
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_softmax_shift_invariance(self):
        rng = np.random.Generator(np.random.PCG64(17))
        for _ in range(20):
            s = rng.standard_normal(6)
            shifted = softmax_probs(s + 123.456, 0.7)
            np.testing.assert_allclose(shifted, softmax_probs(s, 0.7), atol=1e-12)

    def test_softmax_argmax_invariant_under_tau_rescaling(self):
        rng = np.random.Generator(np.random.PCG64(19))
        for _ in range(20):
            s = rng.standard_normal(5)
            base = int(np.argmax(softmax_probs(s, 1.0)))
            for tau in (0.01, 0.5, 3.0, 250.0):
                assert int(np.argmax(softmax_probs(s, tau))) == base
