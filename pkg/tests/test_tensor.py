import numpy as np
import pytest

from ratebp.tensor import RngState, matmul, randn, reduce_mean


def matmul_oracle(a, b):
    """Naive triple loop, independent of the library path."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for x in range(k):
                out[i, j] += a[i, x] * b[x, j]
    return out


class TestMatmul:
    def test_identity(self):
        eye = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(eye, b), b)

    def test_hand_case(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.0

    def test_against_triple_loop(self):
        rng = RngState(42)
        a = rng.gen.standard_normal((5, 7))
        b = rng.gen.standard_normal((7, 3))
        assert np.max(np.abs(matmul(a, b) - matmul_oracle(a, b))) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            matmul(np.zeros(3), np.zeros((3, 2)))

    def test_associativity(self):
        rng = RngState(7)
        for _ in range(20):
            a, b, c = (rng.gen.standard_normal((4, 4)) for _ in range(3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.linalg.norm(left - right) / np.linalg.norm(left) < 1e-9

    def test_purity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        a0, b0 = a.copy(), b.copy()
        out = matmul(a, b)
        assert np.array_equal(a, a0) and np.array_equal(b, b0)
        assert out is not a and out is not b


class TestReduceMean:
    def test_axis0(self):
        out = reduce_mean(np.array([[1.0, 0.0], [0.0, 1.0]]), axis=0)
        assert np.array_equal(out, np.array([0.5, 0.5]))

    def test_all_equal(self):
        out = reduce_mean(np.full((3, 4), 2.5), axis=1)
        assert np.array_equal(out, np.full(3, 2.5))

    def test_hand_value(self):
        out = reduce_mean(np.array([1.0, 0.0, 1.0]), axis=0)
        assert abs(float(out) - 0.6666667) < 1e-7
        assert float(out) == 2.0 / 3.0

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError):
            reduce_mean(np.zeros((0, 3)), axis=0)

    def test_bad_axis_rejected(self):
        with pytest.raises(ValueError):
            reduce_mean(np.zeros((2, 3)), axis=2)

    def test_linearity(self):
        rng = RngState(3)
        x = rng.gen.standard_normal((6, 5))
        y = rng.gen.standard_normal((6, 5))
        alpha = 1.7
        lhs = reduce_mean(alpha * x + y, axis=0)
        rhs = alpha * reduce_mean(x, axis=0) + reduce_mean(y, axis=0)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_finite_on_finite_inputs(self):
        rng = RngState(4)
        a = rng.gen.standard_normal((8, 8)) * 1e6
        assert np.all(np.isfinite(reduce_mean(a, axis=1)))
        assert np.all(np.isfinite(matmul(a, a)))


class TestRandn:
    def test_same_seed_identical(self):
        a = randn(RngState(123), (10, 10))
        b = randn(RngState(123), (10, 10))
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = randn(RngState(1), (10,))
        b = randn(RngState(2), (10,))
        assert np.any(a != b)

    def test_moments(self):
        x = randn(RngState(99), (100000,))
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1.0) < 0.05

    def test_invalid_shape(self):
        with pytest.raises(ValueError):
            randn(RngState(0), (-1, 3))


class TestRngState:
    def test_seed_validation(self):
        with pytest.raises(ValueError):
            RngState(-1)
        with pytest.raises(ValueError):
            RngState(2**64)

    def test_derive_deterministic(self):
        a = RngState(5).derive(3)
        b = RngState(5).derive(3)
        c = RngState(5).derive(4)
        assert np.array_equal(a.gen.standard_normal(4), b.gen.standard_normal(4))
        assert a.seed != c.seed
