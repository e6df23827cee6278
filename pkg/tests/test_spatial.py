import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatialdiar.signals import ChannelSpectrogram, MultiChannelAudio, StftConfig, stft
from spatialdiar.spatial import (DEFAULT_PAIRS, ArrayGeometry, MicPair, angle_feature,
                                 angle_features, augment_af, circular_distance, circular_midpoint,
                                 ipd, min_angular_difference, pair_baseline, steering_phase,
                                 wrap_phase)

angles = st.floats(0, 360, allow_nan=False, exclude_max=True)


def fake_spec(values, sr=16000):
    return ChannelSpectrogram(np.asarray(values), sr, StftConfig())


class TestGeometry:
    def test_circle(self):
        g = ArrayGeometry.circular()
        assert g.n_mics == 8
        np.testing.assert_allclose(np.linalg.norm(g.mic_positions, axis=1), 0.0425)

    def test_diametric_baseline(self):
        g = ArrayGeometry.circular()
        for p in DEFAULT_PAIRS:
            delta, _ = pair_baseline(g, p)
            assert delta == pytest.approx(0.085)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ArrayGeometry([[0, 0], [0, 0]])
        with pytest.raises(ValueError):
            MicPair(1, 1)
        with pytest.raises(IndexError):
            pair_baseline(ArrayGeometry.circular(), MicPair(0, 8))


class TestSteering:
    def test_zero_frequency(self):
        g = ArrayGeometry.circular()
        assert steering_phase(g, MicPair(0, 4), 30.0, 0.0) == 0.0

    def test_broadside_is_zero(self):
        g = ArrayGeometry.circular()
        # mics 0 and 4 lie on the x axis; a source on the y axis reaches both together
        assert steering_phase(g, MicPair(0, 4), 90.0, 1000.0) == pytest.approx(0.0, abs=1e-12)

    def test_endfire_extreme(self):
        g = ArrayGeometry.circular()
        phi = steering_phase(g, MicPair(0, 4), 0.0, 1000.0)
        assert phi == pytest.approx(2 * np.pi * 1000 * 0.085 / 343)

    def test_matches_arrival_delays(self):
        g = ArrayGeometry.circular()
        for theta in (0, 37, 200):
            d = g.arrival_delays(theta)
            for p in DEFAULT_PAIRS:
                # channel m1 leads m2 by 2 pi f (t_m2 - t_m1)
                assert steering_phase(g, p, theta, 500.0) == pytest.approx(
                    2 * np.pi * 500 * (d[p.m2] - d[p.m1]))

    def test_negative_frequency(self):
        with pytest.raises(ValueError):
            steering_phase(ArrayGeometry.circular(), MicPair(0, 4), 0.0, -1.0)


class TestIpd:
    @given(st.floats(-50, 50))
    def test_wrap_range(self, x):
        y = float(wrap_phase(x))
        assert -np.pi < y <= np.pi
        assert np.isclose(np.cos(y), np.cos(x)) and np.isclose(np.sin(y), np.sin(x), atol=1e-9)

    def test_pi_maps_to_pi(self):
        assert wrap_phase(-np.pi) == pytest.approx(np.pi)

    def test_identical_channels(self, rng):
        v = rng.standard_normal((1, 5, 257)) + 1j * rng.standard_normal((1, 5, 257))
        spec = fake_spec(np.concatenate([v, v]))
        np.testing.assert_array_equal(ipd(spec, MicPair(0, 1)), 0.0)

    def test_antisymmetric(self, rng):
        v = rng.standard_normal((2, 5, 257)) + 1j * rng.standard_normal((2, 5, 257))
        spec = fake_spec(v)
        a, b = ipd(spec, MicPair(0, 1)), ipd(spec, MicPair(1, 0))
        np.testing.assert_allclose(np.cos(a), np.cos(b))
        np.testing.assert_allclose(np.sin(a), -np.sin(b), atol=1e-12)

    def test_bad_channel(self, rng):
        spec = fake_spec(np.ones((2, 3, 257), dtype=complex))
        with pytest.raises(IndexError):
            ipd(spec, MicPair(0, 5))


class TestAngleFeature:
    def test_bounded(self, rng):
        v = rng.standard_normal((8, 6, 257)) + 1j * rng.standard_normal((8, 6, 257))
        af = angle_features(fake_spec(v), ArrayGeometry.circular(), DEFAULT_PAIRS, [0, 90, 181])
        assert af.shape == (3, 6, 257)
        assert np.all(np.abs(af) <= 1 + 1e-12)

    def test_unnormalized_is_pair_sum(self, rng):
        v = rng.standard_normal((8, 4, 257)) + 1j * rng.standard_normal((8, 4, 257))
        g = ArrayGeometry.circular()
        a = angle_feature(fake_spec(v), g, DEFAULT_PAIRS, 45, normalize=True).values
        b = angle_feature(fake_spec(v), g, DEFAULT_PAIRS, 45, normalize=False).values
        np.testing.assert_allclose(b, 4 * a)

    def test_plane_wave_peaks_at_source(self):
        g = ArrayGeometry.circular()
        sr, cfg = 16000, StftConfig()
        f = np.arange(257) * sr / cfg.fft_size
        theta = 70.0
        d = g.arrival_delays(theta)
        v = np.exp(-2j * np.pi * f[None, None, :] * d[:, None, None]) * np.ones((8, 3, 257))
        af = angle_features(fake_spec(v), g, DEFAULT_PAIRS, np.arange(360))
        band = (f > 300) & (f < 3400)
        resp = af[:, :, band].mean(axis=(1, 2))
        assert int(np.argmax(resp)) == 70
        np.testing.assert_allclose(af[70], 1.0, atol=1e-12)


class TestAugment:
    @given(st.integers(0, 2 ** 31 - 1), st.floats(0, 1), angles, angles, st.floats(0, 45))
    @settings(max_examples=200, deadline=None)
    def test_properties(self, seed, gamma, ti, tj, tn):
        r = np.random.default_rng(seed)
        a, b = r.uniform(-1, 1, (2, 5, 7))
        ni, nj, theta = augment_af(a, b, ti, tj, gamma, tn)
        assert np.all(ni >= a) and np.all(nj >= b)
        assert np.all(ni >= gamma * b) and np.all(nj >= gamma * a)
        assert 0 <= theta < 360
        hi = min(1.0, gamma + 0.1)
        ni2, nj2, _ = augment_af(a, b, ti, tj, hi, tn)
        # nondecreasing in gamma where the partner feature is nonnegative,
        # nonincreasing where it is negative
        assert np.all(np.where(b >= 0, ni2 >= ni, ni2 <= ni))
        assert np.all(np.where(a >= 0, nj2 >= nj, nj2 <= nj))

    @given(st.integers(0, 2 ** 31 - 1), st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_monotone_for_nonnegative_features(self, seed, g1, g2):
        a, b = np.random.default_rng(seed).uniform(0, 1, (2, 4, 6))
        lo, hi = sorted((g1, g2))
        li, lj, _ = augment_af(a, b, 0, 20, lo)
        hi_i, hi_j, _ = augment_af(a, b, 0, 20, hi)
        assert np.all(hi_i >= li) and np.all(hi_j >= lj)

    def test_gamma_one_symmetric(self, rng):
        a, b = rng.uniform(-1, 1, (2, 9))
        ni, nj, _ = augment_af(a, b, 0, 10, 1.0)
        np.testing.assert_array_equal(ni, nj)

    def test_shared_direction(self):
        assert augment_af([0], [0], 350, 10, 0.9, 5)[2] == pytest.approx(5.0)
        assert circular_midpoint(0, 180) == pytest.approx(270.0)

    def test_errors(self):
        with pytest.raises(ValueError):
            augment_af(np.zeros(3), np.zeros(4), 0, 0, 0.5)
        with pytest.raises(ValueError):
            augment_af(np.zeros(3), np.zeros(3), 0, 0, 1.5)


class TestAngularDifference:
    def test_examples(self):
        np.testing.assert_allclose(min_angular_difference([0, 30, 200]), [30, 30, 160])
        np.testing.assert_allclose(min_angular_difference([350, 10]), [20, 20])
        np.testing.assert_allclose(min_angular_difference([42]), [180])

    def test_empty(self):
        with pytest.raises(ValueError):
            min_angular_difference([])

    @given(st.lists(angles, min_size=2, max_size=6))
    def test_bounds_and_symmetry(self, t):
        d = min_angular_difference(t)
        assert np.all((d >= 0) & (d <= 180))
        assert circular_distance(t[0], t[1]) >= min(d[0], d[1]) - 1e-9
