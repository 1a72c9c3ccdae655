import numpy as np
import numpy.testing as npt
import pytest

from aberkit import tensor as T
from aberkit.tensor import Tensor

import helpers


def t64(a, rg=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=rg)


class TestElementwise:
    def test_mul(self):
        out = T.mul(t64([2.0, 3.0]), t64([4.0, 5.0]))
        npt.assert_array_equal(out.data, [8.0, 15.0])

    def test_sigmoid_origin(self):
        assert T.sigmoid(t64(0.0)).item() == 0.5

    def test_gelu_origin(self):
        assert T.gelu(t64(0.0)).item() == 0.0

    def test_gelu_tanh_form(self):
        # reference evaluation of the tanh approximation
        x = np.linspace(-3, 3, 13)
        ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
        npt.assert_allclose(T.gelu(t64(x)).data, ref, rtol=1e-12)

    def test_broadcasting_trailing(self):
        a = t64(np.ones((2, 3, 4)))
        b = t64(np.arange(4, dtype=np.float64))
        out = T.add(a, b)
        assert out.shape == (2, 3, 4)
        npt.assert_array_equal(out.data[1, 2], [1, 2, 3, 4])

    def test_shape_mismatch_raises(self):
        with pytest.raises(T.ShapeError):
            T.add(t64(np.ones((2, 3))), t64(np.ones((4,))))

    def test_mixed_precision_rejected(self):
        a = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.ones(3, dtype=np.float64))
        with pytest.raises(T.ContractError):
            T.add(a, b)

    def test_scale(self):
        npt.assert_array_equal(T.scale(t64([1.0, -2.0]), 3.0).data, [3.0, -6.0])


class TestMatmul:
    def test_identity(self):
        eye = t64(np.eye(2))
        x = t64([[3.0], [7.0]])
        npt.assert_array_equal(T.matmul(eye, x).data, x.data)

    def test_small_literal(self):
        out = T.matmul(t64([[1.0, 2.0], [3.0, 4.0]]), t64([[1.0], [1.0]]))
        npt.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        got = T.matmul(t64(a), t64(b)).data
        want = helpers.matmul_oracle(a, b)
        assert np.abs(got - want).max() < 1e-12

    def test_inner_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.matmul(t64(np.ones((2, 3))), t64(np.ones((4, 2))))

    def test_batched(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 2, 3))
        b = rng.standard_normal((6, 3, 5))
        got = T.matmul(t64(a), t64(b)).data
        npt.assert_allclose(got, a @ b, rtol=1e-14)


class TestSoftmax:
    def test_uniform(self):
        npt.assert_allclose(T.softmax(t64([0.0, 0.0, 0.0])).data, [1 / 3] * 3)

    def test_no_overflow(self):
        out = T.softmax(t64([1000.0, 1000.0])).data
        npt.assert_allclose(out, [0.5, 0.5])

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 7))
        a = T.softmax(t64(x), axis=-1).data
        b = T.softmax(t64(x + 11.25), axis=-1).data
        npt.assert_allclose(a, b, atol=1e-12)

    def test_rows_sum_to_one_positive(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 9)) * 10
        s = T.softmax(t64(x), axis=-1).data
        npt.assert_allclose(s.sum(-1), 1.0, atol=1e-6)
        assert (s > 0).all()

    def test_nan_rejected(self):
        with pytest.raises(T.NumericError):
            T.softmax(t64([1.0, np.nan]))


class TestConv2d:
    def test_pointwise_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 3, 4, 4))
        out = T.conv2d(t64(x), t64(np.eye(3)), "pointwise_1x1")
        npt.assert_array_equal(out.data, x)

    def test_depthwise_dirac(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 5, 5))
        w = np.zeros((3, 3, 3))
        w[:, 1, 1] = 1.0
        out = T.conv2d(t64(x), t64(w), "depthwise_3x3")
        npt.assert_array_equal(out.data, x)

    def test_pointwise_vs_loop_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((5, 3))
        got = T.conv2d(t64(x), t64(w), "pointwise_1x1").data
        want = helpers.conv1x1_oracle(x, w)
        assert np.abs(got - want).max() < 1e-6

    def test_depthwise_vs_loop_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((3, 3, 3))
        got = T.conv2d(t64(x), t64(w), "depthwise_3x3").data
        want = helpers.depthwise3x3_oracle(x, w)
        assert np.abs(got - want).max() < 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.conv2d(t64(np.ones((1, 3, 4, 4))), t64(np.ones((2, 4))), "pointwise_1x1")


class TestAvgPool:
    def test_spatial_constant(self):
        x = t64(np.full((1, 2, 4, 4), 3.25))
        out = T.avg_pool(x, "spatial")
        assert out.shape == (1, 2, 1, 1)
        npt.assert_array_equal(out.data.ravel(), [3.25, 3.25])

    def test_channel_mean(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = 1.0
        x[0, 1] = 3.0
        out = T.avg_pool(t64(x), "channel")
        assert out.shape == (1, 1, 2, 2)
        npt.assert_array_equal(out.data, np.full((1, 1, 2, 2), 2.0))

    def test_window2_vs_box_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 1, 4, 4))
        got = T.avg_pool(t64(x), "window", window=2).data
        want = helpers.box_pool_oracle(x, 2)
        npt.assert_allclose(got, want, atol=1e-12)

    def test_window3_vs_box_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 5, 6))
        got = T.avg_pool(t64(x), "window", window=3).data
        want = helpers.box_pool_oracle(x, 3)
        npt.assert_allclose(got, want, atol=1e-12)


class TestFft:
    def test_zeros(self):
        out = T.fft2(t64(np.zeros((4, 4))))
        assert out.dtype == np.complex128
        npt.assert_array_equal(out.data, np.zeros((4, 4), dtype=np.complex128))

    def test_constant_dc(self):
        c = 0.7
        X = T.fft2(t64(np.full((4, 4), c))).data
        assert abs(X[0, 0] - 16 * c) < 1e-12
        X[0, 0] = 0
        assert np.abs(X).max() < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(10)
        for shape in [(8, 8), (7, 5), (1, 9), (12, 16)]:
            x = rng.standard_normal(shape)
            back = T.ifft2(T.fft2(t64(x))).data
            assert np.abs(back - x).max() < 1e-10 * max(1.0, np.abs(x).max())

    def test_parseval(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((8, 8))
        X = T.fft2(t64(x)).data
        lhs = (x**2).sum()
        rhs = (np.abs(X) ** 2).sum() / x.size
        assert abs(lhs - rhs) < 1e-10

    def test_nan_rejected(self):
        bad = np.ones((4, 4))
        bad[1, 1] = np.nan
        with pytest.raises(T.NumericError):
            T.fft2(t64(bad))

    def test_grad_input_rejected(self):
        with pytest.raises(T.ContractError):
            T.fft2(t64(np.ones((4, 4)), rg=True))


class TestStructural:
    def test_extract_merge_round_trip(self):
        rng = np.random.default_rng(12)
        x = t64(rng.standard_normal((2, 3, 8, 8)))
        w = T.extract_windows(x, 4, 4)
        assert w.shape == (2, 4, 3, 4, 4)
        back = T.merge_windows(w, 2, 2)
        npt.assert_array_equal(back.data, x.data)

    def test_extract_overlapping(self):
        x = t64(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
        w = T.extract_windows(x, 2, 1)
        assert w.shape == (1, 9, 1, 2, 2)
        npt.assert_array_equal(w.data[0, 0, 0], [[0, 1], [4, 5]])
        npt.assert_array_equal(w.data[0, 4, 0], [[5, 6], [9, 10]])

    def test_pixel_shuffle_round_trip(self):
        rng = np.random.default_rng(13)
        x = t64(rng.standard_normal((1, 4, 6, 6)))
        down = T.pixel_unshuffle(x, 2)
        assert down.shape == (1, 16, 3, 3)
        back = T.pixel_shuffle(down, 2)
        npt.assert_array_equal(back.data, x.data)

    def test_pad_replicate(self):
        x = t64(np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2))
        p = T.pad_replicate(x, (1, 1, 1, 1))
        npt.assert_array_equal(
            p.data[0, 0],
            [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]],
        )

    def test_concat_narrow(self):
        a = t64(np.ones((1, 2, 2, 2)))
        b = t64(np.zeros((1, 3, 2, 2)))
        c = T.concat([a, b], axis=1)
        assert c.shape == (1, 5, 2, 2)
        npt.assert_array_equal(T.narrow(c, 1, 0, 2).data, a.data)
        npt.assert_array_equal(T.narrow(c, 1, 2, 3).data, b.data)


class TestTensorInvariants:
    def test_size_matches_shape(self):
        x = Tensor(np.zeros((3, 4)))
        assert x.size == 12 and x.shape == (3, 4)

    def test_complex_requires_grad_rejected(self):
        with pytest.raises(T.ContractError):
            Tensor(np.zeros(3, dtype=np.complex128), requires_grad=True)

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32
