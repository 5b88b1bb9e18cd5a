import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2sr.errors import DimensionMismatch, DomainError, InvariantViolation
from s2sr.resample import (
    DegradationSpec,
    area_downsample,
    area_downsample_array,
    bicubic_upsample,
    bilinear_upsample,
    gaussian_blur,
    gaussian_blur_array,
    mtf_to_sigma,
    simulate_scene,
    upsample_array,
    upsample_array_transpose,
)
from s2sr.scene import BandImage

from conftest import random_scene


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


class TestMtfToSigma:
    def test_quoted_psf_range(self):
        assert mtf_to_sigma(0.3849) == pytest.approx(0.4399, abs=1e-4)
        assert mtf_to_sigma(0.2247) == pytest.approx(0.5500, abs=1e-4)
        assert abs(mtf_to_sigma(0.3849) - 0.44) < 0.005
        assert abs(mtf_to_sigma(0.2247) - 0.55) < 0.005

    def test_perfect_mtf_limit(self):
        assert mtf_to_sigma(1 - 1e-12) < 1e-5

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            mtf_to_sigma(bad)

    @given(st.floats(0.001, 0.998), st.floats(1e-4, 0.5))
    def test_strictly_decreasing(self, m, dm):
        m2 = min(m + dm, 0.999)
        if m2 > m:
            assert mtf_to_sigma(m2) < mtf_to_sigma(m)


class TestGaussianBlur:
    def test_constant_preserved_exactly(self):
        im = BandImage("B2", 10, np.full((13, 9), 1234.5))
        for sigma in (1 / 6, 0.5, 0.55, 2.0):
            assert np.array_equal(gaussian_blur(im, sigma).data, im.data)

    @given(c=st.floats(-1e4, 1e5), sigma=st.floats(0.1, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_constant_preserved_exactly_in_float64(self, c, sigma):
        x = np.full((11, 7), c)
        assert np.array_equal(gaussian_blur_array(x, sigma), x)

    def test_impulse_response(self):
        x = np.zeros((9, 9))
        x[4, 4] = 1.0
        out = gaussian_blur_array(x, 0.5)
        # kernel over the ceil(4 sigma) = 2 pixel window, evaluated directly
        taps = [math.exp(-(d * d) / (2 * 0.25)) for d in range(-2, 3)]
        taps = [t / sum(taps) for t in taps]
        expected = np.zeros((9, 9))
        for i in range(5):
            for j in range(5):
                expected[2 + i, 2 + j] = taps[i] * taps[j]
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_mass_preserved_for_interior_content(self):
        rng = np.random.default_rng(0)
        x = np.zeros((40, 40))
        x[10:30, 10:30] = rng.uniform(0, 1000, (20, 20))
        out = gaussian_blur_array(x, 1.5)
        assert abs(out.sum() - x.sum()) / x.sum() < 1e-3

    def test_matches_dense_convolution_in_interior(self):
        rng = np.random.default_rng(1)
        x = rng.random((20, 20))
        sigma = 0.8
        r = math.ceil(4 * sigma)
        k = np.array([math.exp(-(d * d) / (2 * sigma**2)) for d in range(-r, r + 1)])
        k2 = np.outer(k, k) / k.sum() ** 2
        out = gaussian_blur_array(x, sigma)
        for i in range(r, 20 - r):
            for j in range(r, 20 - r):
                assert out[i, j] == pytest.approx((k2 * x[i - r : i + r + 1, j - r : j + r + 1]).sum(), abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5000, 5000), st.floats(0.1, 2.0), st.integers(0, 1000))
    def test_commutes_with_constant_offset(self, c, sigma, seed):
        x = np.random.default_rng(seed).uniform(0, 1000, (11, 8))
        np.testing.assert_allclose(gaussian_blur_array(x + c, sigma), gaussian_blur_array(x, sigma) + c, atol=1e-8)


class TestAreaDownsample:
    def test_four_values(self):
        out = area_downsample(BandImage("B2", 10, np.array([[1.0, 2.0], [3.0, 4.0]])), 2)
        assert out.data.tolist() == [[2.5]]
        assert out.gsd == 20

    def test_random_block_means(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 10000, (12, 12))
        out = area_downsample_array(x, 6)
        for by in range(2):
            for bx in range(2):
                block = [x[by * 6 + i, bx * 6 + j] for i in range(6) for j in range(6)]
                assert out[by, bx] == pytest.approx(sum(block) / 36, rel=1e-15)

    @pytest.mark.parametrize("s", [2, 6])
    def test_constant(self, s):
        im = BandImage("B2", 10, np.full((12, 18), 777.25))
        assert np.all(area_downsample(im, s).data == np.float32(777.25))

    def test_indivisible(self):
        with pytest.raises(DimensionMismatch):
            area_downsample(BandImage("B2", 10, np.ones((10, 10))), 6)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1e4, 1e4), st.integers(0, 1000))
    def test_commutes_with_constant_offset(self, c, seed):
        x = np.random.default_rng(seed).uniform(0, 1000, (12, 12))
        np.testing.assert_allclose(area_downsample_array(x + c, 6), area_downsample_array(x, 6) + c, atol=1e-8)


class TestUpsampling:
    @pytest.mark.parametrize("fn", [bilinear_upsample, bicubic_upsample])
    @pytest.mark.parametrize("s", [2, 6])
    def test_constant(self, fn, s):
        im = BandImage("B5", 120, np.full((5, 4), 4321.0))
        out = fn(im, s)
        assert out.data.shape == (5 * s, 4 * s)
        assert np.all(out.data == np.float32(4321.0))

    def test_single_sample(self):
        out = bilinear_upsample(BandImage("B5", 20, np.array([[3.25]])), 2)
        assert out.data.tolist() == [[3.25, 3.25], [3.25, 3.25]]
        assert out.gsd == 10

    def test_bilinear_ramp_against_closed_form(self):
        x = np.array([[0.0, 1.0], [2.0, 3.0]])
        out = upsample_array(x, 2, "bilinear")

        def sample(u, v):
            u = min(max(u, 0.0), 1.0)
            v = min(max(v, 0.0), 1.0)
            return (1 - u) * (1 - v) * 0 + (1 - u) * v * 1 + u * (1 - v) * 2 + u * v * 3

        for i in range(4):
            for j in range(4):
                assert out[i, j] == pytest.approx(sample((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), abs=1e-15)
        assert out[0].tolist() == [0.0, 0.25, 0.75, 1.0]

    def test_bicubic_against_kernel_summation(self):
        rng = np.random.default_rng(3)
        x = rng.random((6, 6))
        out = upsample_array(x, 2, "bicubic")
        for i in range(12):
            for j in range(12):
                u, v = (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5
                acc = 0.0
                for p in range(math.floor(u) - 1, math.floor(u) + 3):
                    for q in range(math.floor(v) - 1, math.floor(v) + 3):
                        acc += keys(u - p) * keys(v - q) * x[min(max(p, 0), 5), min(max(q, 0), 5)]
                assert out[i, j] == pytest.approx(acc, abs=1e-6)

    @pytest.mark.parametrize("s", [2, 6])
    def test_bicubic_reproduces_linear_ramp_in_interior(self, s):
        n = 10
        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        x = 3.0 * yy - 2.0 * xx + 5.0
        out = upsample_array(x, s, "bicubic")
        u = (np.arange(n * s) + 0.5) / s - 0.5
        expected = 3.0 * u[:, None] - 2.0 * u[None, :] + 5.0
        m = 2 * s
        np.testing.assert_allclose(out[m:-m, m:-m], expected[m:-m, m:-m], atol=1e-10)

    @pytest.mark.parametrize("kind", ["bilinear", "bicubic"])
    def test_transpose_is_adjoint(self, kind):
        rng = np.random.default_rng(4)
        x = rng.random((2, 3, 4, 5))
        g = rng.random((2, 9, 12, 5))
        lhs = (upsample_array(x, 3, kind, axes=(1, 2)) * g).sum()
        rhs = (x * upsample_array_transpose(g, x.shape, 3, kind, axes=(1, 2))).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_weights_shift_invariant(self):
        # a window cropped on the coarse grid reproduces the whole-image result bit for bit
        rng = np.random.default_rng(5)
        x = rng.random((30, 30)).astype(np.float32)
        full = upsample_array(x, 6)
        part = upsample_array(x[4:20, 7:25], 6)
        assert np.array_equal(full[5 * 6 + 3 : 19 * 6, 8 * 6 : 24 * 6], part[6 + 3 : 15 * 6, 6 : 17 * 6])


class TestSimulation:
    def test_default_sigma(self):
        assert DegradationSpec(2).sigma_for("B2") == 0.5
        assert DegradationSpec(6).sigma_for("B2") == pytest.approx(1 / 6)
        assert DegradationSpec(2, sigma=0.55).sigma_for("B5") == 0.55
        spec = DegradationSpec(2, per_band_sigma={"B2": 0.44})
        assert spec.sigma_for("B2") == 0.44
        with pytest.raises(InvariantViolation):
            spec.sigma_for("B3")
        with pytest.raises(InvariantViolation):
            DegradationSpec(1)
        with pytest.raises(InvariantViolation):
            DegradationSpec(2, sigma=0.0)

    def test_two_x_scales(self):
        scene = random_scene(72, seed=1)
        inputs, targets = simulate_scene(scene, DegradationSpec(2))
        assert inputs.base_gsd == 20 and not inputs.has_c
        assert [b.gsd for b in inputs.set_a] == [20] * 4
        assert [b.gsd for b in inputs.set_b] == [40] * 6
        assert inputs.width == 36 and inputs.set_b[0].width == 18
        assert [t.band_id for t in targets] == ["B5", "B6", "B7", "B8a", "B11", "B12"]
        assert all(t.gsd == 20 and t.width == 36 for t in targets)
        assert targets[0] == scene.set_b[0]

    def test_six_x_scales(self):
        scene = random_scene(72, seed=1)
        inputs, targets = simulate_scene(scene, DegradationSpec(6))
        assert [b.gsd for b in inputs.bands()] == [60] * 4 + [120] * 6 + [360] * 2
        assert inputs.width == 12 and inputs.set_c[0].width == 2
        assert [t.band_id for t in targets] == ["B1", "B9"]
        assert all(t.gsd == 60 and t.width == 12 for t in targets)

    def test_constant_scene(self):
        scene = random_scene(72, seed=1, low=500.0, high=500.0)
        inputs, targets = simulate_scene(scene, DegradationSpec(6))
        for b in inputs.bands() + targets:
            assert np.all(b.data == np.float32(500.0))

    def test_indivisible(self):
        with pytest.raises(DimensionMismatch):
            simulate_scene(random_scene(42, seed=1), DegradationSpec(6))
        with pytest.raises(DimensionMismatch):
            simulate_scene(random_scene(6, seed=1), DegradationSpec(2))

    def test_band_is_blurred_then_averaged(self):
        scene = random_scene(72, seed=9)
        inputs, _ = simulate_scene(scene, DegradationSpec(2, sigma=0.7))
        expected = area_downsample_array(gaussian_blur_array(scene.set_b[2].data, 0.7), 2).astype(np.float32)
        assert np.array_equal(inputs.set_b[2].data, expected)
