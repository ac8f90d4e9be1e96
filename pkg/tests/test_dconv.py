import numpy as np
import pytest

from fisheyehdk import autograd as ad
from fisheyehdk.dconv import (
    ConvParams,
    bilinear_gather,
    bilinear_sample,
    center_tap_mask,
    conv2d,
    deform_conv2d,
    rdc_conv2d,
)
from fisheyehdk.optim import check_gradient


def loop_conv(f, w, b, padding=0, stride=1, dilation=1):
    """Quadruple-loop cross-correlation with zero padding."""
    B, C, H, W = f.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    Wo = (W + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for x in range(Wo):
                    acc = b[o] if b is not None else 0.0
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride - padding + i * dilation
                                xx = x * stride - padding + j * dilation
                                if 0 <= yy < H and 0 <= xx < W:
                                    acc += w[o, c, i, j] * f[n, c, yy, xx]
                    out[n, o, y, x] = acc
    return out


def loop_deform(f, field, w, b, padding):
    """Per-tap scalar bilinear sampling at ``base + offset``."""
    B, C, H, W = f.shape
    O, _, kh, kw = w.shape
    out = np.zeros((B, O, H + 2 * padding - kh + 1, W + 2 * padding - kw + 1))
    for n in range(B):
        for o in range(O):
            for y in range(out.shape[2]):
                for x in range(out.shape[3]):
                    acc = b[o]
                    for i in range(kh):
                        for j in range(kw):
                            t = i * kw + j
                            py = y - padding + i + field[n, 2 * t, y, x]
                            px = x - padding + j + field[n, 2 * t + 1, y, x]
                            for c in range(C):
                                acc += w[o, c, i, j] * bilinear_sample(f, n, c, py, px)
                    out[n, o, y, x] = acc
    return out


class TestBilinear:
    def setup_method(self):
        self.f = np.random.default_rng(0).normal(size=(2, 3, 5, 6))

    def test_integer_point(self):
        assert bilinear_sample(self.f, 1, 2, 3.0, 4.0) == self.f[1, 2, 3, 4]

    def test_midpoint(self):
        p, q = self.f[0, 1, 2, 3], self.f[0, 1, 3, 3]
        assert bilinear_sample(self.f, 0, 1, 2.5, 3.0) == pytest.approx((p + q) / 2, abs=1e-15)

    def test_outside_is_zero(self):
        assert bilinear_sample(self.f, 0, 0, -5.0, -5.0) == 0.0

    def test_edge_blends_with_zero(self):
        assert bilinear_sample(self.f, 0, 0, -0.5, 0.0) == pytest.approx(self.f[0, 0, 0, 0] / 2)

    def test_gather_matches_scalar(self):
        rng = np.random.default_rng(1)
        py = rng.uniform(-2, 7, size=(2, 10))
        px = rng.uniform(-2, 8, size=(2, 10))
        got = bilinear_gather(self.f, py, px)
        for b in range(2):
            for c in range(3):
                for k in range(10):
                    assert got[b, c, k] == pytest.approx(bilinear_sample(self.f, b, c, py[b, k], px[b, k]), abs=1e-14)


class TestConv:
    def test_identity_kernel(self):
        f = np.random.default_rng(2).normal(size=(1, 3, 4, 4))
        w = np.eye(3)[:, :, None, None]
        np.testing.assert_array_equal(conv2d(f, w), f)

    def test_ones_on_constant(self):
        f = np.full((1, 1, 5, 5), 2.0)
        out = conv2d(f, np.ones((1, 1, 3, 3)), padding=1)
        np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 18.0)
        assert out[0, 0, 0, 0] == pytest.approx(8.0)

    @pytest.mark.parametrize("stride,padding,dilation", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (1, 2, 2)])
    def test_against_loops(self, stride, padding, dilation):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(2, 3, 6, 6))
        w, b = rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        np.testing.assert_allclose(conv2d(f, w, b, stride, padding, dilation),
                                   loop_conv(f, w, b, padding, stride, dilation), atol=1e-12)

    def test_linear_in_weights(self):
        rng = np.random.default_rng(4)
        f, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        lhs = conv2d(f, 2 * w, b, padding=1) - b[None, :, None, None]
        rhs = 2 * (conv2d(f, w, b, padding=1) - b[None, :, None, None])
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestDeform:
    def test_zero_field_equals_conv(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            C, O = rng.integers(1, 4, size=2)
            k = rng.choice([1, 3, 5])
            f = rng.normal(size=(2, C, 7, 6))
            w, b = rng.normal(size=(O, C, k, k)), rng.normal(size=O)
            pad = k // 2
            out = deform_conv2d(f, np.zeros((2, 2 * k * k, 7, 6)), w, b, padding=pad)
            np.testing.assert_allclose(out, conv2d(f, w, b, padding=pad), atol=1e-10, rtol=0)

    def test_identity_1x1(self):
        f = np.random.default_rng(6).normal(size=(1, 2, 4, 4))
        out = deform_conv2d(f, np.zeros((1, 2, 4, 4)), np.eye(2)[:, :, None, None], np.zeros(2))
        np.testing.assert_array_equal(out, f)

    def test_half_pixel_shift(self):
        rng = np.random.default_rng(7)
        f = rng.normal(size=(1, 1, 5, 5))
        w, b = rng.normal(size=(1, 1, 3, 3)), np.zeros(1)
        field = np.zeros((1, 18, 5, 5))
        field[:, 0::2] = 0.5
        # resample the zero-padded input half a pixel lower, then convolve without padding
        rng_ = range(-1, 6)
        shifted = np.array([[[[bilinear_sample(f, 0, 0, y + 0.5, x) for x in rng_] for y in rng_]]])
        np.testing.assert_allclose(deform_conv2d(f, field, w, b, padding=1),
                                   loop_conv(shifted, w, b, padding=0), atol=1e-12)

    def test_random_field_against_loops(self):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(2, 2, 5, 5))
        w, b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        field = rng.normal(size=(2, 18, 5, 5))
        np.testing.assert_allclose(deform_conv2d(f, field, w, b, padding=1),
                                   loop_deform(f, field, w, b, 1), atol=1e-12)

    def test_translation_consistency(self):
        rng = np.random.default_rng(9)
        f = rng.normal(size=(1, 1, 8, 8))
        w, b = rng.normal(size=(1, 1, 3, 3)), np.zeros(1)
        g = np.roll(f, (1, 2), axis=(2, 3))
        zero = np.zeros((1, 18, 8, 8))
        a = deform_conv2d(f, zero, w, b, padding=1)
        c = deform_conv2d(g, zero, w, b, padding=1)
        np.testing.assert_allclose(c[0, 0, 3:7, 4:7], a[0, 0, 2:6, 2:5], atol=1e-12)

    def test_bad_field_shape(self):
        with pytest.raises(ValueError):
            deform_conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 9, 4, 4)), np.zeros((1, 1, 3, 3)), padding=1)

    def test_stride_rejected(self):
        with pytest.raises(ValueError):
            deform_conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 18, 2, 2)), np.zeros((1, 1, 3, 3)), stride=2)

    @pytest.mark.parametrize("which", ["input", "weight", "field"])
    def test_gradient_of_squared_output(self, which):
        rng = np.random.default_rng(10)
        f = rng.normal(size=(1, 2, 4, 4))
        w, b = rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2)
        field = rng.uniform(0.2, 0.8, size=(1, 18, 4, 4))
        args = {"input": f, "weight": w, "field": field}

        def loss(t):
            kw = dict(args, **{which: t})
            out = deform_conv2d(kw["input"], kw["field"], kw["weight"], b, padding=1)
            return ad.tsum(out * out)

        _, _, err = check_gradient(loss, args[which])
        assert err < 1e-4


class TestRdc:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.f = rng.normal(size=(1, 2, 4, 4))
        self.w, self.b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)

    def test_centre_only_field_is_plain_conv(self):
        field = np.zeros((1, 18, 4, 4))
        field[:, 8:10] = 0.7
        np.testing.assert_array_equal(rdc_conv2d(self.f, field, self.w, self.b, padding=1),
                                      conv2d(self.f, self.w, self.b, padding=1))

    def test_zero_field(self):
        np.testing.assert_array_equal(rdc_conv2d(self.f, np.zeros((1, 18, 4, 4)), self.w, self.b, padding=1),
                                      conv2d(self.f, self.w, self.b, padding=1))

    def test_agrees_with_deform_iff_centre_zero(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            field = rng.normal(size=(1, 18, 4, 4))
            centre_zero = rng.random() < 0.5
            if centre_zero:
                field[:, 8:10] = 0.0
            same = np.allclose(rdc_conv2d(self.f, field, self.w, self.b, padding=1),
                               deform_conv2d(self.f, field, self.w, self.b, padding=1), atol=1e-12)
            assert same == centre_zero

    def test_mask(self):
        m = center_tap_mask((3, 3))
        assert m.sum() == 16 and m[8] == 0 and m[9] == 0


def test_conv_params_dispatch():
    rng = np.random.default_rng(13)
    p = ConvParams(rng.normal(size=(2, 1, 3, 3)), np.zeros(2), padding=1)
    f = rng.normal(size=(1, 1, 4, 4))
    zero = np.zeros((1, 18, 4, 4))
    assert p.kernel_size == (3, 3)
    np.testing.assert_array_equal(p.deform(f, zero), p.conv(f))
    np.testing.assert_array_equal(p.rdc(f, zero), p.conv(f))
