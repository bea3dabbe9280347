import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskdet.tensor import (BatchNormParams, ConvParams, conv2d, conv_output_size,
                            depthwise_conv2d, fold_batchnorm, normalize_input, pointwise_conv,
                            relu6, resize_bilinear)

from oracles import conv2d_direct, depthwise_direct, rel_error


def _conv(rng, kh, kw, ic, oc, stride=1, pad=0):
    return ConvParams(rng.standard_normal((kh, kw, ic, oc)).astype(np.float32),
                      rng.standard_normal(oc).astype(np.float32), stride, pad)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.array([[[5.0]]], dtype=np.float32)
        out = conv2d(x, ConvParams(np.ones((1, 1, 1, 1)), np.zeros(1)))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 5.0

    def test_stem_shape(self):
        x = np.zeros((320, 320, 3), np.float32)
        out = conv2d(x, ConvParams(np.zeros((3, 3, 3, 32)), np.zeros(32), stride=2, padding=1))
        assert out.shape == (160, 160, 32)

    def test_matches_direct_summation(self, rng):
        x = rng.standard_normal((8, 8, 2)).astype(np.float32)
        p = _conv(rng, 3, 3, 2, 4, stride=1, pad=1)
        assert rel_error(conv2d(x, p), conv2d_direct(x, p.weight, p.bias, 1, 1)) <= 1e-5

    @pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (2, 1, 3), (2, 0, 1), (3, 2, 5), (1, 1, 2)])
    def test_stride_padding_variants(self, rng, stride, pad, k):
        x = rng.standard_normal((9, 7, 3)).astype(np.float32)
        p = _conv(rng, k, k, 3, 5, stride, pad)
        out = conv2d(x, p)
        assert out.shape == (conv_output_size(9, k, stride, pad), conv_output_size(7, k, stride, pad), 5)
        assert rel_error(out, conv2d_direct(x, p.weight, p.bias, stride, pad)) <= 1e-5

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="input channels"):
            conv2d(np.zeros((4, 4, 3), np.float32), _conv(rng, 3, 3, 2, 4))

    def test_kernel_larger_than_input_rejected(self, rng):
        with pytest.raises(ValueError, match="does not fit"):
            conv2d(np.zeros((2, 2, 1), np.float32), _conv(rng, 5, 5, 1, 1))

    def test_linearity(self, rng):
        x = rng.standard_normal((6, 6, 3)).astype(np.float32)
        y = rng.standard_normal((6, 6, 3)).astype(np.float32)
        p = ConvParams(rng.standard_normal((3, 3, 3, 4)), np.zeros(4), 1, 1)
        lhs = conv2d(2.0 * x - 0.5 * y, p)
        rhs = 2.0 * conv2d(x, p) - 0.5 * conv2d(y, p)
        assert rel_error(lhs, rhs) <= 1e-5

    def test_bad_params_rejected(self):
        with pytest.raises(ValueError):
            ConvParams(np.zeros((3, 3, 1)), np.zeros(1))
        with pytest.raises(ValueError):
            ConvParams(np.zeros((3, 3, 1, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            ConvParams(np.zeros((3, 3, 1, 2)), np.zeros(2), stride=0)


class TestDepthwise:
    def test_unit_kernel_is_identity(self, rng):
        x = rng.standard_normal((5, 6, 4)).astype(np.float32)
        out = depthwise_conv2d(x, np.ones((1, 1, 4)), np.zeros(4))
        np.testing.assert_array_equal(out, x)

    def test_shape(self):
        out = depthwise_conv2d(np.zeros((10, 10, 8), np.float32), np.zeros((3, 3, 8)),
                               np.zeros(8), stride=2, padding=1)
        assert out.shape == (5, 5, 8)

    def test_equals_block_diagonal_conv(self, rng):
        x = rng.standard_normal((7, 9, 5)).astype(np.float32)
        k = rng.standard_normal((3, 3, 5)).astype(np.float32)
        b = rng.standard_normal(5).astype(np.float32)
        dense = np.zeros((3, 3, 5, 5), np.float32)
        for c in range(5):
            dense[:, :, c, c] = k[:, :, c]
        for stride in (1, 2):
            got = depthwise_conv2d(x, k, b, stride, 1)
            want = conv2d(x, ConvParams(dense, b, stride, 1))
            assert np.abs(got - want).max() <= 1e-6 * max(1.0, np.abs(want).max())

    def test_matches_direct(self, rng):
        x = rng.standard_normal((8, 8, 3)).astype(np.float32)
        k = rng.standard_normal((3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(3).astype(np.float32)
        assert rel_error(depthwise_conv2d(x, k, b, 2, 1), depthwise_direct(x, k, b, 2, 1)) <= 1e-5

    def test_container_layout_accepted(self, rng):
        x = rng.standard_normal((4, 4, 2)).astype(np.float32)
        k = rng.standard_normal((3, 3, 2)).astype(np.float32)
        np.testing.assert_array_equal(depthwise_conv2d(x, k[..., None], np.zeros(2), 1, 1),
                                      depthwise_conv2d(x, k, np.zeros(2), 1, 1))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            depthwise_conv2d(np.zeros((4, 4, 3), np.float32), np.zeros((3, 3, 2)), np.zeros(2))


class TestPointwise:
    def test_identity_weights(self, rng):
        x = rng.standard_normal((4, 4, 3)).astype(np.float32)
        np.testing.assert_array_equal(pointwise_conv(x, np.eye(3)[None, None], np.zeros(3)), x)

    def test_shape(self, rng):
        out = pointwise_conv(np.zeros((4, 4, 3), np.float32), np.zeros((1, 1, 3, 16)), np.zeros(16))
        assert out.shape == (4, 4, 16)

    def test_equals_conv_k1(self, rng):
        x = rng.standard_normal((5, 3, 6)).astype(np.float32)
        p = _conv(rng, 1, 1, 6, 7)
        np.testing.assert_array_equal(pointwise_conv(x, p.weight, p.bias), conv2d(x, p))

    def test_rejects_spatial_kernel(self):
        with pytest.raises(ValueError):
            pointwise_conv(np.zeros((4, 4, 3), np.float32), np.zeros((3, 3, 3, 2)), np.zeros(2))


class TestRelu6:
    def test_points(self):
        np.testing.assert_array_equal(relu6(np.array([-1.0, 3.0, 7.0])), [0.0, 3.0, 6.0])

    @given(st.lists(st.floats(-100, 100, width=32), min_size=1, max_size=50))
    def test_idempotent(self, values):
        x = np.array(values, dtype=np.float32)
        np.testing.assert_array_equal(relu6(relu6(x)), relu6(x))


class TestFoldBatchnorm:
    def _bn(self, n, gamma, eps=1e-3):
        return BatchNormParams(np.full(n, gamma), np.zeros(n), np.zeros(n), np.full(n, 1 - eps), eps)

    def test_identity_normalization(self, rng):
        conv = _conv(rng, 3, 3, 2, 4)
        folded = fold_batchnorm(conv, self._bn(4, 1.0))
        np.testing.assert_array_equal(folded.weight, conv.weight)
        np.testing.assert_array_equal(folded.bias, conv.bias)

    def test_pure_scaling(self, rng):
        conv = _conv(rng, 3, 3, 2, 4)
        folded = fold_batchnorm(conv, self._bn(4, 2.0))
        np.testing.assert_array_equal(folded.weight, 2 * conv.weight)
        np.testing.assert_array_equal(folded.bias, 2 * conv.bias)

    def test_matches_conv_then_normalize(self, rng):
        for _ in range(20):
            conv = _conv(rng, 3, 3, 3, 5, 1, 1)
            bn = BatchNormParams(rng.uniform(0.5, 2, 5), rng.standard_normal(5),
                                 rng.standard_normal(5), rng.uniform(0.1, 3, 5), 1e-3)
            x = rng.standard_normal((6, 6, 3)).astype(np.float32)
            raw = conv2d(x, conv).astype(np.float64)
            two_step = bn.gamma * (raw - bn.mean) / np.sqrt(bn.variance + bn.epsilon) + bn.beta
            folded = conv2d(x, fold_batchnorm(conv, bn))
            assert np.all(np.abs(folded - two_step) <= 1e-5 * (1 + np.abs(two_step)))

    def test_length_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            fold_batchnorm(_conv(rng, 1, 1, 2, 4), self._bn(3, 1.0))

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            BatchNormParams([1.0], [0.0], [0.0], [-1.0])


class TestResize:
    def test_same_size_identity(self, rng):
        x = rng.standard_normal((5, 7, 3)).astype(np.float32)
        np.testing.assert_array_equal(resize_bilinear(x, 5, 7), x)

    @pytest.mark.parametrize("shape", [(3, 3), (17, 5), (40, 64)])
    def test_constant_stays_constant(self, shape):
        x = np.full((7, 9, 2), 42.5, np.float32)
        out = resize_bilinear(x, *shape)
        assert out.shape == (*shape, 2)
        assert np.all(out == 42.5)

    def test_two_by_two_upsample(self):
        x = np.array([[0, 0], [10, 10]], np.float32)[..., None]
        out = resize_bilinear(x, 4, 4)[..., 0]
        # half-pixel centres: source rows -0.25->0, 0.25, 0.75, 1.25->1
        np.testing.assert_allclose(out[:, 0], [0.0, 2.5, 7.5, 10.0])
        assert np.all(np.diff(out, axis=0) >= 0)
        assert out.min() >= 0 and out.max() <= 10
        assert np.all(out == out[:, :1])

    def test_bad_size_rejected(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((2, 2, 1), np.float32), 0, 3)


def test_normalize_input():
    np.testing.assert_array_equal(normalize_input(np.array([0.0, 255.0, 127.5])), [-1.0, 1.0, 0.0])
    out = normalize_input(np.arange(256, dtype=np.uint8))
    assert out.min() >= -1 and out.max() <= 1


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.integers(1, 4),
       s=st.integers(1, 3), p=st.integers(0, 2))
def test_shape_law(h, w, k, s, p):
    oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    x = np.zeros((h, w, 2), np.float32)
    if oh <= 0 or ow <= 0:
        with pytest.raises(ValueError):
            conv2d(x, ConvParams(np.zeros((k, k, 2, 3)), np.zeros(3), s, p))
        return
    assert conv2d(x, ConvParams(np.zeros((k, k, 2, 3)), np.zeros(3), s, p)).shape == (oh, ow, 3)
    assert depthwise_conv2d(x, np.zeros((k, k, 2)), np.zeros(2), s, p).shape == (oh, ow, 2)
