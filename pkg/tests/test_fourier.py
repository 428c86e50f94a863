"""Fourier module tests against a hand-written direct DFT oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvnet import tensor as T
from kvnet.errors import ShapeError
from kvnet.fourier import (ComplexImage, channel_paired_transform, fft2c, fft2c_array,
                           ifft2c, ifft2c_array)
from kvnet.tensor import Tensor
from oracles import naive_dft2c


class TestFft2c:
    def test_constant_image_hits_centered_dc(self):
        k = fft2c(ComplexImage(np.ones((2, 2)), np.zeros((2, 2)), "image"))
        z = k.to_complex()
        assert abs(z[1, 1] - 2.0) < 1e-12
        z[1, 1] = 0
        assert np.max(np.abs(z)) < 1e-12

    def test_parseval(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        Z = fft2c_array(z)
        assert abs(np.linalg.norm(Z) - np.linalg.norm(z)) / np.linalg.norm(z) < 1e-12

    def test_shifted_delta_is_plane_wave_vs_oracle(self):
        z = np.zeros((8, 8), dtype=np.complex128)
        z[2, 5] = 1.0
        got = fft2c_array(z)
        assert np.allclose(np.abs(got), 1.0 / 8.0, atol=1e-12)  # unit-magnitude / sqrt(HP)
        assert np.max(np.abs(got - naive_dft2c(z))) < 1e-9

    def test_matches_naive_dft_on_random(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        assert np.max(np.abs(fft2c_array(z) - naive_dft2c(z))) < 1e-9
        assert np.max(np.abs(ifft2c_array(z) - naive_dft2c(z, inverse=True))) < 1e-9

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        back = ifft2c_array(fft2c_array(z))
        assert np.max(np.abs(back - z)) < 1e-10

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        y = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        lhs = fft2c_array(2.5 * x - 1.5 * y)
        rhs = 2.5 * fft2c_array(x) - 1.5 * fft2c_array(y)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_ifft_of_centered_delta_is_constant(self):
        z = np.zeros((2, 2), dtype=np.complex128)
        z[1, 1] = 1.0
        back = ifft2c_array(z)
        assert np.allclose(back, 0.5)

    def test_domain_tags_enforced(self):
        img = ComplexImage(np.ones((2, 2)), np.zeros((2, 2)), "image")
        k = fft2c(img)
        assert k.domain == "kspace"
        with pytest.raises(ValueError, match="image-domain"):
            fft2c(k)
        with pytest.raises(ValueError, match="k-space"):
            ifft2c(img)

    def test_plane_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ComplexImage(np.ones((2, 2)), np.ones((2, 3)))


class TestChannelPaired:
    def test_roundtrip_float32(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 4, 8, 8)).astype(np.float32))
        back = channel_paired_transform(channel_paired_transform(x, "fwd"), "inv")
        assert back.data.dtype == np.float32
        assert np.max(np.abs(back.data - x.data)) < 1e-5

    def test_c2_matches_fft2c(self):
        rng = np.random.default_rng(4)
        re = rng.standard_normal((4, 4))
        im = rng.standard_normal((4, 4))
        out = channel_paired_transform(Tensor(np.stack([re, im])[None]), "fwd")
        ref = fft2c(ComplexImage(re, im, "image"))
        assert np.allclose(out.data[0, 0], ref.re, atol=1e-12)
        assert np.allclose(out.data[0, 1], ref.im, atol=1e-12)

    def test_per_plane_parseval_vs_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 8, 8))
        out = channel_paired_transform(Tensor(x), "fwd")
        for plane in range(2):
            z = x[0, 2 * plane] + 1j * x[0, 2 * plane + 1]
            ref = naive_dft2c(z)
            got = out.data[0, 2 * plane] + 1j * out.data[0, 2 * plane + 1]
            assert np.max(np.abs(got - ref)) < 1e-9
            assert abs(np.linalg.norm(got) - np.linalg.norm(z)) < 1e-9

    def test_odd_channel_count_rejected(self):
        with pytest.raises(ShapeError, match="even"):
            channel_paired_transform(Tensor(np.zeros((1, 3, 4, 4))), "fwd")

    def test_gradient_is_adjoint(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
        proj = rng.standard_normal((1, 2, 4, 4))
        out = channel_paired_transform(x, "fwd")
        T.sum_all(out * Tensor(proj)).backward()
        back = channel_paired_transform(Tensor(proj), "inv")
        assert np.allclose(x.grad, back.data, atol=1e-12)

    def test_grad_check(self):
        x = Tensor(np.random.default_rng(7).standard_normal((1, 4, 4, 4)), requires_grad=True)
        assert T.grad_check(lambda a: channel_paired_transform(a, "fwd"), [x]) < 1e-4
        assert T.grad_check(lambda a: channel_paired_transform(a, "inv"), [x]) < 1e-4
