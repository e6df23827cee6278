import numpy as np
import pytest

from spatialdiar.annotations import overlap_ratio, rttm_read
from spatialdiar.profiles import read_profiles
from spatialdiar.signals import read_wav, stft
from spatialdiar.simulator import (InfeasibleSceneError, SceneConfig, diffuse_noise,
                                   fractional_delay_filter, generate_turns, overlap_mix_augment,
                                   propagate, speaker_embedding, synthesize_scene,
                                   virtual_embedding, write_scene)
from spatialdiar.spatial import DEFAULT_PAIRS, ArrayGeometry, ipd, steering_phase, wrap_phase


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SceneConfig(n_speakers=5)
        with pytest.raises(ValueError):
            SceneConfig(target_overlap_ratio=1.0)
        with pytest.raises(ValueError):
            SceneConfig(n_speakers=2, doas=[0.0])
        with pytest.raises(ValueError):
            SceneConfig(source="speech")


class TestTurns:
    @pytest.mark.parametrize("target", [0.1, 0.3, 0.45])
    def test_overlap_target(self, target):
        for seed in range(5):
            ann = generate_turns(np.random.default_rng(seed), 3, 20.0, target)
            assert abs(overlap_ratio(ann) - target) <= 0.05

    def test_no_self_overlap(self):
        ann = generate_turns(np.random.default_rng(0), 4, 30.0, 0.4)
        for spk in ann.speakers:
            segs = sorted((s.onset, s.end) for s in ann.segments if s.speaker == spk)
            for (s0, e0), (s1, e1) in zip(segs, segs[1:]):
                assert s1 >= e0

    def test_infeasible(self):
        # two speakers cannot overlap 95% of the speech when neither talks over itself
        with pytest.raises(InfeasibleSceneError):
            generate_turns(np.random.default_rng(0), 2, 20.0, 0.95, max_attempts=2)


class TestPropagation:
    def test_integer_delay(self, rng):
        h = fractional_delay_filter(3.0, 16)
        assert int(np.argmax(h)) == 16 + 3
        np.testing.assert_allclose(h[19], 1.0)

    def test_tone_phases_match_geometry(self):
        truth = synthesize_scene(SceneConfig(n_speakers=2, doas=[30.0, 210.0], duration=10.0,
                                             source="tones", seed=5, target_overlap_ratio=0.1))
        spec = stft(truth.audio)
        g = ArrayGeometry.circular()
        for p, bins in zip(truth.profiles, truth.tone_bins):
            segs = [(s.onset, s.end) for s in truth.annotation.segments if s.speaker == p.name]
            others = [(s.onset, s.end) for s in truth.annotation.segments if s.speaker != p.name]
            t = np.arange(spec.frames) * spec.hop_seconds
            solo = np.zeros(spec.frames, dtype=bool)
            for s, e in segs:
                solo |= (t >= s + 0.05) & (t + 0.025 <= e - 0.05)
            for s, e in others:
                solo &= ~((t + 0.025 > s) & (t < e))
            assert solo.any()
            assert np.diff(bins).min() >= 8
            for pair in DEFAULT_PAIRS:
                got = ipd(spec, pair)[solo][:, bins]
                want = steering_phase(g, pair, p.theta, spec.freqs[bins])
                np.testing.assert_allclose(wrap_phase(got - want), 0.0, atol=1e-3)

    def test_diffuse_coherence(self, rng):
        g = ArrayGeometry.circular()
        x = diffuse_noise(rng, g, 16000 * 20, 16000)
        from scipy.signal import coherence
        f, c = coherence(x[0], x[4], fs=16000, nperseg=512)
        d = np.linalg.norm(g.mic_positions[0] - g.mic_positions[4])
        theory = np.sinc(2 * f * d / g.sound_speed) ** 2
        band = (f > 100) & (f < 7000)
        assert np.max(np.abs(c[band] - theory[band])) < 0.1


class TestScene:
    def test_deterministic(self):
        cfg = SceneConfig(n_speakers=3, duration=5.0, snr_db=15.0, seed=11)
        a, b = synthesize_scene(cfg), synthesize_scene(cfg)
        np.testing.assert_array_equal(a.audio.samples, b.audio.samples)
        assert a.annotation == b.annotation

    def test_profiles(self):
        truth = synthesize_scene(SceneConfig(n_speakers=4, duration=5.0, seed=2, min_separation=40))
        thetas = [p.theta for p in truth.profiles]
        assert len(thetas) == 4
        d = np.abs(np.subtract.outer(thetas, thetas)) % 360
        d = np.minimum(d, 360 - d) + np.eye(4) * 360
        assert d.min() >= 40

    def test_embeddings_disjoint_pools(self):
        a = speaker_embedding(0, 0)
        assert np.linalg.norm(a) == pytest.approx(1.0)
        assert not np.allclose(a, virtual_embedding(0))

    def test_snr(self):
        cfg = SceneConfig(n_speakers=2, duration=5.0, snr_db=10.0, seed=4)
        noisy = synthesize_scene(cfg)
        clean = synthesize_scene(SceneConfig(n_speakers=2, duration=5.0, snr_db=None, seed=4))
        noise = noisy.audio.samples - clean.audio.samples
        sr = 16000
        mask = np.zeros(noise.shape[1], dtype=bool)
        for s, e in clean.annotation.speech():
            mask[int(s * sr):int(e * sr)] = True
        snr = 10 * np.log10(np.mean(clean.audio.samples[:, mask] ** 2) / np.mean(noise ** 2))
        assert snr == pytest.approx(10.0, abs=0.2)

    def test_write(self, tmp_path):
        truth = synthesize_scene(SceneConfig(n_speakers=2, duration=3.0, seed=9))
        wav = write_scene(truth, tmp_path)
        assert read_wav(wav).channels == 8
        back = rttm_read(wav.with_suffix(".rttm"))[0].tracks()
        want = truth.annotation.tracks()
        assert list(back) == list(want)
        for k in want:
            np.testing.assert_allclose(back[k], want[k], atol=0.005 + 1e-9)
        prof = read_profiles(wav.with_suffix(".profile"))
        assert [p.name for p in prof] == ["spk1", "spk2"]
        np.testing.assert_allclose(prof[0].embedding, truth.profiles[0].embedding)


class TestOverlapMix:
    def test_ratio_and_labels(self, rng):
        from spatialdiar.signals import MultiChannelAudio
        a = MultiChannelAudio(rng.standard_normal((2, 800)), 16000)
        b = MultiChannelAudio(3 * rng.standard_normal((2, 800)), 16000)
        la = np.array([[1, 0], [0, 0]], dtype=bool)
        lb = np.array([[0, 0], [0, 1]], dtype=bool)
        mixed, labels = overlap_mix_augment(a, b, 6.0, la, lb)
        added = mixed.samples - a.samples
        ssr = 20 * np.log10(np.sqrt(np.mean(a.samples ** 2)) / np.sqrt(np.mean(added ** 2)))
        assert ssr == pytest.approx(6.0)
        np.testing.assert_array_equal(labels, la | lb)

    def test_errors(self, rng):
        from spatialdiar.signals import MultiChannelAudio
        a = MultiChannelAudio(rng.standard_normal((2, 800)), 16000)
        with pytest.raises(ValueError):
            overlap_mix_augment(a, MultiChannelAudio(np.zeros((2, 800)), 16000), 0.0)
        with pytest.raises(ValueError):
            overlap_mix_augment(a, MultiChannelAudio(np.ones((2, 700)), 16000), 0.0)
