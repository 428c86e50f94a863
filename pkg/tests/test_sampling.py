"""Mask generation, application, zero-filling and the MSK1 format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvnet.errors import FormatError, ShapeError
from kvnet.fourier import ComplexImage, fft2c, ifft2c
from kvnet.metrics import ssim
from kvnet.sampling import (Mask, apply_mask, center_line_count, generate_random_mask,
                            zero_fill)
from oracles import naive_dft2c


def random_kspace(seed, h=8, w=8):
    rng = np.random.default_rng(seed)
    return ComplexImage(rng.standard_normal((h, w)), rng.standard_normal((h, w)), "kspace")


class TestGenerate:
    def test_documented_probability_formula(self):
        mask = generate_random_mask(64, 0.08, 4.0, seed=0)
        assert center_line_count(64, 0.08) == 5
        assert abs(mask.line_probability - 11.0 / 59.0) < 1e-12
        assert mask.warning is None

    def test_full_center_fraction_samples_everything(self):
        mask = generate_random_mask(64, 1.0, 8.0, seed=3)
        assert mask.n_sampled == 64

    def test_mean_sampled_count_matches_expectation(self):
        counts = [generate_random_mask(64, 0.08, 4.0, seed=s).n_sampled for s in range(1000)]
        expected = 5 + 59 * (11.0 / 59.0)  # 16
        assert abs(np.mean(counts) - expected) / expected < 0.10

    def test_determinism(self):
        a = generate_random_mask(64, 0.08, 4.0, seed=123)
        b = generate_random_mask(64, 0.08, 4.0, seed=123)
        assert a.values.tobytes() == b.values.tobytes()
        c = generate_random_mask(64, 0.08, 4.0, seed=124)
        assert a.values.tobytes() != c.values.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**9), p_half=st.integers(4, 64))
    def test_center_always_sampled(self, seed, p_half):
        p = 2 * p_half
        mask = generate_random_mask(p, 0.08, 4.0, seed=seed)
        n_center = center_line_count(p, 0.08)
        pad = (p - n_center + 1) // 2
        assert np.all(mask.values[pad : pad + n_center] == 1)

    def test_overfull_center_clamps_and_warns(self):
        mask = generate_random_mask(64, 0.5, 8.0, seed=0)  # 32 center lines > 64/8
        assert mask.warning is not None and "clamp" in mask.warning
        assert mask.line_probability == 0.0
        assert mask.n_sampled == 32

    @pytest.mark.parametrize("p,cf,accel", [(5, 0.08, 4), (2, 0.08, 4), (64, 0.0, 4), (64, 1.5, 4), (64, 0.08, 0.5)])
    def test_invalid_arguments(self, p, cf, accel):
        with pytest.raises(ValueError):
            generate_random_mask(p, cf, accel, seed=0)


class TestApply:
    def test_all_ones_mask_is_identity(self):
        k = random_kspace(0)
        out = apply_mask(k, np.ones(8, dtype=np.uint8))
        assert out.re.tobytes() == k.re.tobytes()
        assert out.im.tobytes() == k.im.tobytes()

    def test_center_only(self):
        k = random_kspace(1)
        values = np.zeros(8, dtype=np.uint8)
        values[3:5] = 1
        out = apply_mask(k, values)
        z = out.to_complex()
        assert np.all(z[:, values == 0] == 0)
        assert np.all(z[:, 3:5] == k.to_complex()[:, 3:5])

    def test_projection_never_gains_energy(self):
        k = random_kspace(2)
        mask = generate_random_mask(8, 0.25, 2.0, seed=5)
        out = apply_mask(k, mask)
        assert np.linalg.norm(out.to_complex()) <= np.linalg.norm(k.to_complex())

    def test_idempotent_exactly(self):
        k = random_kspace(3)
        mask = generate_random_mask(8, 0.25, 2.0, seed=9)
        once = apply_mask(k, mask)
        twice = apply_mask(once, mask)
        assert once.re.tobytes() == twice.re.tobytes()
        assert once.im.tobytes() == twice.im.tobytes()

    def test_length_mismatch(self):
        with pytest.raises(ShapeError, match="length"):
            apply_mask(random_kspace(4), np.ones(6, dtype=np.uint8))


class TestZeroFill:
    def test_full_mask_recovers_truth(self):
        rng = np.random.default_rng(5)
        img = ComplexImage(rng.standard_normal((8, 8)), rng.standard_normal((8, 8)), "image")
        k = fft2c(img)
        zf = zero_fill(apply_mask(k, np.ones(8, dtype=np.uint8)))
        assert np.max(np.abs(zf.to_complex() - img.to_complex())) < 1e-5

    def test_lossy_mask_costs_ssim(self):
        rng = np.random.default_rng(6)
        mag = np.abs(rng.standard_normal((16, 16))) + 0.1
        img = ComplexImage(mag, np.zeros_like(mag), "image")
        k = fft2c(img)
        values = np.ones(16, dtype=np.uint8)
        values[0] = 0  # drop a nonzero column
        assert np.abs(k.to_complex()[:, 0]).max() > 0
        zf = zero_fill(apply_mask(k, values))
        score = float(ssim(zf.magnitude(), img.magnitude(), float(img.magnitude().max())).data)
        assert score < 1.0

    def test_masked_magnitude_matches_naive_dft(self):
        rng = np.random.default_rng(7)
        img = ComplexImage(rng.standard_normal((8, 8)), rng.standard_normal((8, 8)), "image")
        k = apply_mask(fft2c(img), generate_random_mask(8, 0.25, 2.0, seed=1))
        got = zero_fill(k).magnitude()
        ref = np.abs(naive_dft2c(k.to_complex(), inverse=True))
        assert np.max(np.abs(got - ref)) < 1e-9


class TestMskFile:
    def test_round_trip(self, tmp_path):
        mask = generate_random_mask(64, 0.08, 4.0, seed=77)
        path = tmp_path / "m.msk"
        mask.save(path)
        blob = path.read_bytes()
        assert blob[:4] == b"MSK1" and len(blob) == 8 + 64
        loaded = Mask.load(path)
        assert np.array_equal(loaded.values, mask.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.msk"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError, match="magic"):
            Mask.load(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.msk"
        path.write_bytes(b"MSK1" + (64).to_bytes(4, "little") + bytes(10))
        with pytest.raises(FormatError):
            Mask.load(path)

    def test_mask_validation(self):
        with pytest.raises(ValueError):
            Mask(np.array([0, 2, 1], dtype=np.uint8))
        with pytest.raises(ValueError):
            Mask(np.zeros(4, dtype=np.uint8))
