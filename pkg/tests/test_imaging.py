import numpy as np
import pytest

from puddleseg import imaging

from oracles import dft2_brute, equalize_brute, highpass_brute, idft2_brute


def rand_image(rng, h, w):
    return rng.random((h, w))


class TestEqualizeHistogram:
    def test_constant_image_unchanged(self):
        img = np.full((5, 7), 0.3)
        out = imaging.equalize_histogram(img)
        np.testing.assert_array_equal(out, img)

    def test_four_level_case_matches_cdf_oracle(self):
        img = np.array([[0, 85], [170, 255]]) / 255.0
        out = imaging.equalize_histogram(img, levels=256)
        expected = equalize_brute(img, 256)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        # direct hand evaluation: cdf = (.25,.5,.75,1), cdf_min=.25
        np.testing.assert_allclose(
            out, np.array([[0.0, 1 / 3], [2 / 3, 1.0]]), atol=1e-12)

    def test_matches_oracle_on_random_images(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            img = rand_image(rng, *rng.integers(2, 33, size=2))
            out = imaging.equalize_histogram(img)
            np.testing.assert_allclose(out, equalize_brute(img, 256), atol=1e-12)

    def test_monotone_rank_preservation(self):
        rng = np.random.default_rng(3)
        img = rand_image(rng, 16, 16)
        out = imaging.equalize_histogram(img)
        a = img.ravel()
        b = out.ravel()
        order = np.argsort(a, kind="stable")
        diffs = np.diff(b[order])
        assert (diffs >= -1e-12).all()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_output_cdf_near_uniform(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            img = rand_image(rng, 24, 24)
            out = imaging.equalize_histogram(img)
            q = np.rint(img * 255).astype(int)
            max_mass = np.bincount(q.ravel(), minlength=256).max() / q.size
            vals = np.sort(out.ravel())
            cum = np.arange(1, vals.size + 1) / vals.size
            assert np.max(np.abs(cum - vals)) <= max_mass + 1e-9

    def test_idempotent_up_to_quantization(self):
        rng = np.random.default_rng(5)
        img = rand_image(rng, 20, 20)
        once = imaging.equalize_histogram(img)
        twice = imaging.equalize_histogram(once)
        assert np.abs(twice - once).max() <= 1.0 / 255 + 1e-9


class TestFft2:
    def test_constant_image_dc_only(self):
        c = 0.4
        spec = imaging.fft2(np.full((6, 5), c))
        assert spec.amplitude[0, 0] == pytest.approx(c * 30, abs=1e-9)
        rest = spec.amplitude.copy()
        rest[0, 0] = 0.0
        assert np.abs(rest).max() < 1e-9
        assert abs(spec.phase[0, 0]) < 1e-12

    def test_cosine_two_bins(self):
        h, w = 16, 8
        img = np.cos(2 * np.pi * np.arange(h) / h)[:, None] * np.ones((1, w))
        spec = imaging.fft2(img)
        expected = np.zeros((h, w))
        expected[1, 0] = expected[h - 1, 0] = h * w / 2
        np.testing.assert_allclose(spec.amplitude, expected, atol=1e-9)
        oracle = dft2_brute(img)
        np.testing.assert_allclose(spec.amplitude, np.abs(oracle), atol=1e-9)

    def test_matches_brute_force_dft(self):
        rng = np.random.default_rng(7)
        img = rand_image(rng, 8, 8)
        spec = imaging.fft2(img)
        oracle = dft2_brute(img)
        np.testing.assert_allclose(spec.amplitude, np.abs(oracle), atol=1e-9)
        # compare phases via the complex field to dodge angle wrapping
        ours = spec.amplitude * np.exp(1j * spec.phase)
        np.testing.assert_allclose(ours, oracle, atol=1e-9)

    def test_amplitude_conjugate_symmetric(self):
        rng = np.random.default_rng(8)
        img = rand_image(rng, 6, 9)
        a = imaging.fft2(img).amplitude
        h, w = a.shape
        for u in range(h):
            for v in range(w):
                assert a[u, v] == pytest.approx(a[(-u) % h, (-v) % w], abs=1e-9)


class TestIfft2:
    def test_round_trip(self):
        rng = np.random.default_rng(9)
        img = rand_image(rng, 16, 16)
        field, resid = imaging.ifft2(imaging.fft2(img))
        assert resid <= 1e-6
        np.testing.assert_allclose(field, img, atol=1e-6)

    def test_dc_only_spectrum_gives_constant(self):
        c = 0.7
        h, w = 4, 6
        amp = np.zeros((h, w))
        amp[0, 0] = c * h * w
        field, resid = imaging.ifft2(
            imaging.Spectrum(h, w, amp, np.zeros((h, w))))
        assert resid <= 1e-9
        np.testing.assert_allclose(field, np.full((h, w), c), atol=1e-9)

    def test_matches_brute_inverse(self):
        rng = np.random.default_rng(10)
        img = rand_image(rng, 8, 8)
        spec = imaging.fft2(img)
        complex_spec = spec.amplitude * np.exp(1j * spec.phase)
        field, _ = imaging.ifft2(spec)
        np.testing.assert_allclose(field, idft2_brute(complex_spec).real,
                                   atol=1e-9)

    def test_parseval(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            img = rand_image(rng, 16, 12)
            spec = imaging.fft2(img)
            lhs = (img ** 2).sum()
            rhs = (spec.amplitude ** 2).sum() / img.size
            assert lhs == pytest.approx(rhs, rel=1e-6)


class TestAmplitudeOnlyReconstruct:
    def test_constant(self):
        field = imaging.amplitude_only_reconstruct(np.full((8, 8), 0.25))
        np.testing.assert_allclose(field, 0.25, atol=1e-9)

    def test_cosine_is_fixed_point(self):
        h, w = 16, 16
        img = np.cos(2 * np.pi * np.arange(h) / h)[:, None] * np.ones((1, w))
        out = imaging.amplitude_only_reconstruct(img)
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_sine_becomes_cosine(self):
        h, w = 16, 16
        sin_img = np.sin(2 * np.pi * np.arange(h) / h)[:, None] * np.ones((1, w))
        cos_img = np.cos(2 * np.pi * np.arange(h) / h)[:, None] * np.ones((1, w))
        out = imaging.amplitude_only_reconstruct(sin_img)
        np.testing.assert_allclose(out, cos_img, atol=1e-6)
        # cross-check against the brute-force zero-phase pipeline
        spec = dft2_brute(sin_img)
        oracle = idft2_brute(np.abs(spec).astype(complex)).real
        np.testing.assert_allclose(out, oracle, atol=1e-9)

    def test_real_output(self):
        rng = np.random.default_rng(13)
        img = rand_image(rng, 12, 12)
        spec = imaging.fft2(img)
        flat = imaging.Spectrum(spec.height, spec.width, spec.amplitude,
                                np.zeros_like(spec.phase))
        _, resid = imaging.ifft2(flat)
        assert resid <= 1e-6


class TestHighPassFilter:
    def test_constant_image_zeroed(self):
        out = imaging.high_pass_filter(np.full((8, 8), 0.9), 0.3)
        assert np.abs(out).max() < 1e-9

    def test_tiny_cutoff_reproduces_zero_mean_input(self):
        rng = np.random.default_rng(14)
        img = rand_image(rng, 16, 16)
        img -= img.mean()
        out = imaging.high_pass_filter(img, 1e-9)
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_matches_masked_dft_oracle(self):
        rng = np.random.default_rng(15)
        img = rand_image(rng, 16, 16)
        out = imaging.high_pass_filter(img, 0.5)
        np.testing.assert_allclose(out, highpass_brute(img, 0.5), atol=1e-9)

    def test_zero_mean_output(self):
        rng = np.random.default_rng(16)
        for cutoff in (0.1, 0.25, 0.5, 0.9):
            img = rand_image(rng, 12, 20)
            out = imaging.high_pass_filter(img, cutoff)
            assert abs(out.mean()) < 1e-6

    def test_cutoff_range_validated(self):
        with pytest.raises(ValueError):
            imaging.high_pass_filter(np.full((4, 4), 0.5), 0.0)
        with pytest.raises(ValueError):
            imaging.high_pass_filter(np.full((4, 4), 0.5), 1.0)


def test_round_trip_many_random_sizes():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(200):
        h = int(rng.integers(2, 65))
        w = int(rng.integers(2, 65))
        img = rng.random((h, w))
        field, resid = imaging.ifft2(imaging.fft2(img))
        worst = max(worst, np.abs(field - img).max(), resid)
    assert worst <= 1e-6
