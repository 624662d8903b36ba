import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfnn import numerics as nx
from mfnn.errors import ShapeError

from conftest import central_diff, rel_err


def conv_oracle(x, w, b, stride, pad):
    """Direct summation cross-correlation."""
    B, Cin, L = x.shape
    Cout, _, K = w.shape
    xp = np.zeros((B, Cin, L + 2 * pad))
    xp[:, :, pad:pad + L] = x
    lout = (L + 2 * pad - K) // stride + 1
    y = np.zeros((B, Cout, lout))
    for bi in range(B):
        for o in range(Cout):
            for t in range(lout):
                acc = b[o]
                for c in range(Cin):
                    for k in range(K):
                        acc += w[o, c, k] * xp[bi, c, t * stride + k]
                y[bi, o, t] = acc
    return y


class TestConv1d:
    def test_difference_kernel(self):
        x = np.array([[[1.0, 2, 3, 4, 5]]])
        w = np.array([[[1.0, 0, -1]]])
        y = nx.conv1d(x, w, np.zeros(1), padding="valid")
        np.testing.assert_array_equal(y, [[[-2.0, -2, -2]]])

    def test_zero_kernel_gives_bias(self, rng):
        x = rng.standard_normal((2, 3, 17))
        y = nx.conv1d(x, np.zeros((4, 3, 5)), np.arange(4.0))
        np.testing.assert_array_equal(y, np.broadcast_to(np.arange(4.0)[None, :, None], (2, 4, 17)))

    def test_same_padding_keeps_length(self, rng):
        y = nx.conv1d(rng.standard_normal((1, 1, 500)), rng.standard_normal((6, 1, 5)), np.zeros(6))
        assert y.shape == (1, 6, 500)

    @pytest.mark.parametrize("stride,padding", [(1, "valid"), (1, "same"), (2, "same"), (3, 1), (2, "valid")])
    def test_matches_direct_summation(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 13))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        pad = nx.resolve_padding(padding, 5)
        np.testing.assert_allclose(nx.conv1d(x, w, b, stride, padding), conv_oracle(x, w, b, stride, pad),
                                   atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            nx.conv1d(rng.standard_normal((1, 2, 10)), rng.standard_normal((3, 1, 3)), np.zeros(3))

    def test_kernel_longer_than_input(self):
        with pytest.raises(ShapeError):
            nx.conv1d(np.ones((1, 1, 3)), np.ones((1, 1, 5)), padding="valid")

    def test_output_length_grid(self):
        for L, K, stride, pad in itertools.product(range(1, 20), (1, 2, 3, 5, 7), (1, 2, 3), (0, 1, 2, 3)):
            if K > L + 2 * pad:
                continue
            x = np.ones((1, 1, L))
            y = nx.conv1d(x, np.ones((1, 1, K)), None, stride, pad)
            assert y.shape[2] == (L + 2 * pad - K) // stride + 1
            if pad == K // 2 and K % 2 == 1:
                assert y.shape[2] == -(-L // stride)

    @pytest.mark.parametrize("stride,padding", [(1, "same"), (2, "same"), (1, "valid"), (3, 2)])
    def test_backward_finite_differences(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 11))
        w = rng.standard_normal((2, 3, 5))
        b = rng.standard_normal(2)
        up = rng.standard_normal(nx.conv1d(x, w, b, stride, padding).shape)
        f = lambda: float(np.sum(nx.conv1d(x, w, b, stride, padding) * up))
        dx, dw, db = nx.conv1d_backward(x, w, up, stride, padding)
        assert rel_err(dx, central_diff(f, x)) <= 1e-5
        assert rel_err(dw, central_diff(f, w)) <= 1e-5
        assert rel_err(db, central_diff(f, b)) <= 1e-5


class TestAvgPool:
    def test_means(self):
        np.testing.assert_array_equal(nx.avgpool1d(np.array([[[1.0, 3, 5, 7]]]), 2), [[[2.0, 6.0]]])

    def test_constant(self):
        np.testing.assert_allclose(nx.avgpool1d(np.full((2, 3, 9), 2.5), 3), 2.5, rtol=0, atol=1e-15)

    def test_drops_remainder(self):
        assert nx.avgpool1d(np.zeros((1, 1, 125)), 2).shape == (1, 1, 62)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            nx.avgpool1d(np.zeros((1, 1, 1)), 2)

    @pytest.mark.parametrize("L,k", [(8, 2), (9, 2), (10, 3), (5, 1)])
    def test_backward_finite_differences(self, rng, L, k):
        x = rng.standard_normal((2, 2, L))
        up = rng.standard_normal((2, 2, L // k))
        f = lambda: float(np.sum(nx.avgpool1d(x, k) * up))
        assert rel_err(nx.avgpool1d_backward(x.shape, up, k), central_diff(f, x)) <= 1e-5


class TestDense:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(nx.dense(x, np.eye(4), np.zeros(4)), x)

    def test_hand_product(self):
        np.testing.assert_array_equal(nx.dense(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]),
                                               np.array([0.5])), [[3.5]])

    def test_zero_input(self):
        np.testing.assert_array_equal(nx.dense(np.zeros((2, 3)), np.ones((3, 2)), np.array([1.0, -1.0])),
                                      [[1.0, -1.0], [1.0, -1.0]])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            nx.dense(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_backward_finite_differences(self, rng):
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)
        up = rng.standard_normal((3, 5))
        f = lambda: float(np.sum(nx.dense(x, w, b) * up))
        dx, dw, db = nx.dense_backward(x, w, up)
        for got, arr in ((dx, x), (dw, w), (db, b)):
            assert rel_err(got, central_diff(f, arr)) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3), st.integers(4, 30))
def test_linearity(seed, a, b, L):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 2, L)), r.standard_normal((2, 2, L))
    w = r.standard_normal((3, 2, 3))
    conv = lambda v: nx.conv1d(v, w, None)
    np.testing.assert_allclose(conv(a * x + b * y), a * conv(x) + b * conv(y), atol=1e-9)
    pool = lambda v: nx.avgpool1d(v, 2)
    np.testing.assert_allclose(pool(a * x + b * y), a * pool(x) + b * pool(y), atol=1e-9)


def test_batch_partition_is_bitwise_identical(rng):
    x = rng.standard_normal((8, 3, 40))
    w = rng.standard_normal((5, 3, 5))
    b = rng.standard_normal(5)
    full = nx.conv1d(x, w, b)
    parts = np.concatenate([nx.conv1d(x[i:i + 3], w, b) for i in range(0, 8, 3)])
    np.testing.assert_array_equal(full, parts)


def test_precision_switch():
    with nx.precision("float32"):
        assert nx.as_tensor([1.0]).dtype == np.float32
        y = nx.conv1d(nx.as_tensor(np.ones((1, 1, 8))), nx.as_tensor(np.ones((1, 1, 3))))
        assert y.dtype == np.float32
    assert nx.get_dtype() == np.float64


def test_debug_mode_flags_non_finite():
    from mfnn.errors import NumericError
    with pytest.raises(NumericError):
        nx.dense(np.array([[np.inf]]), np.ones((1, 1)), np.zeros(1))
