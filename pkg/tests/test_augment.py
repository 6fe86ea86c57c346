import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byolspeak.audio_io import Waveform
from byolspeak.augment import (
    AugmentationPolicy,
    MixupBank,
    ViewPair,
    apply_crop_resize,
    gaussian_mix,
    make_view_pair,
    mix_noise_at_snr,
    mixup,
    pitch_shift,
    post_normalize,
    random_resize_crop,
    sample_crop,
    time_stretch,
)
from byolspeak.features import MelConfig, NormStats, apply_norm, log_mel

from helpers import ScriptedRng, fourier_peak_hz, tone


class TestPolicy:
    def test_defaults_valid(self):
        AugmentationPolicy()

    def test_bad_probability(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(p_noise=1.5)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(rrc_time_range=(0.0, 1.0))


class TestMixupBank:
    def test_eviction_oldest_first(self):
        bank = MixupBank(capacity=3)
        for i in range(5):
            bank.push(np.full((1,), float(i)))
        assert [e[0] for e in bank.snapshot()] == [2.0, 3.0, 4.0]

    def test_sample_empty_raises(self):
        with pytest.raises(IndexError):
            MixupBank(4).sample(np.random.default_rng(0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 50))
    def test_capacity_never_exceeded(self, cap, pushes):
        bank = MixupBank(capacity=cap)
        for i in range(pushes):
            bank.push(np.full((1,), float(i)))
        assert len(bank) == min(cap, pushes)
        expected = [float(i) for i in range(max(0, pushes - cap), pushes)]
        assert [e[0] for e in bank.snapshot()] == expected


class TestMixup:
    def test_zero_ratio_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((10, 8))
        bank = MixupBank(8)
        bank.push(np.exp(rng.standard_normal((10, 8))))
        out = mixup(x, bank, rng, alpha=0.0)
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_empty_bank_passthrough_and_push(self):
        x = np.random.default_rng(1).standard_normal((5, 4))
        bank = MixupBank(8)
        out = mixup(x, bank, np.random.default_rng(2))
        np.testing.assert_array_equal(out, x)
        assert len(bank) == 1
        np.testing.assert_allclose(bank.snapshot()[0], np.exp(x))

    def test_equal_operand_fixed_point(self):
        x = np.zeros((4, 4))  # exp(x) = 1
        bank = MixupBank(8)
        bank.push(np.ones((4, 4)))
        out = mixup(x, bank, np.random.default_rng(3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_stated_formula_arithmetic(self):
        # p = 4, q = 1, lam = 0.4 -> log(0.6*4 + 0.4*1) = log(2.8)
        x = np.full((2, 2), np.log(4.0))
        bank = MixupBank(8)
        bank.push(np.ones((2, 2)))
        rng = ScriptedRng([("integers", 0), ("uniform", 0.4)])
        out = mixup(x, bank, rng)
        np.testing.assert_allclose(out, np.log(2.8), atol=1e-12)

    def test_push_happens_after_mix(self):
        x = np.zeros((2, 2))
        bank = MixupBank(8)
        mixup(x, bank, np.random.default_rng(0))
        assert len(bank) == 1  # only x's own frames, pushed post-mix


class TestRandomResizeCrop:
    def test_full_frame_identity(self):
        x = np.random.default_rng(4).standard_normal((100, 64))
        policy = AugmentationPolicy(rrc_freq_range=(1.0, 1.0), rrc_time_range=(1.0, 1.0))
        out = random_resize_crop(x, policy, np.random.default_rng(5))
        np.testing.assert_allclose(out, x, atol=1e-5)

    def test_frequency_scale_capped_at_one(self):
        policy = AugmentationPolicy(rrc_freq_range=(1.4, 1.4), rrc_time_range=(1.0, 1.0))
        crop = sample_crop(100, 64, policy, np.random.default_rng(0))
        assert crop.f_count == 64
        assert crop.f_offset == 0

    def test_frequency_never_exceeds_axis(self):
        policy = AugmentationPolicy()
        rng = np.random.default_rng(6)
        for _ in range(2000):
            crop = sample_crop(100, 64, policy, rng)
            assert 1 <= crop.f_count <= 64
            assert 0 <= crop.f_offset <= 64 - crop.f_count

    def test_oversized_time_crop_zero_fill_centered(self):
        x = np.ones((100, 64))
        policy = AugmentationPolicy(rrc_freq_range=(1.0, 1.0), rrc_time_range=(1.5, 1.5))
        crop = sample_crop(100, 64, policy, np.random.default_rng(7))
        assert crop.t_count == 150
        assert crop.t_offset == -25
        out = apply_crop_resize(x, crop)
        assert out.shape == (100, 64)
        assert out[0].max() < 0.1  # fill region resized back onto the edges
        assert out[50].min() > 0.9  # interior survives

    def test_shape_preserved(self):
        x = np.random.default_rng(8).standard_normal((73, 64))
        out = random_resize_crop(x, AugmentationPolicy(), np.random.default_rng(9))
        assert out.shape == (73, 64)


class TestGaussianMix:
    def test_zero_ratio_identity(self):
        x = np.random.default_rng(10).standard_normal((20, 16))
        policy = AugmentationPolicy(gaussian_alpha=0.0)
        out = gaussian_mix(x, policy, np.random.default_rng(11))
        np.testing.assert_allclose(out, x, atol=1e-6)

    def test_same_seed_bit_identical(self):
        x = np.random.default_rng(12).standard_normal((20, 16))
        a = gaussian_mix(x, AugmentationPolicy(), np.random.default_rng(13))
        b = gaussian_mix(x, AugmentationPolicy(), np.random.default_rng(13))
        assert a.tobytes() == b.tobytes()

    def test_noise_field_statistics_recoverable(self):
        # Monte-Carlo oracle: invert the stated formula for a known lambda and
        # check the recovered field matches N(0, 0.04)
        x = np.zeros((100, 100))
        lam = 0.3
        rng = ScriptedRng([("uniform", lam), ("normal", None)])
        out = gaussian_mix(x, AugmentationPolicy(), rng)
        assert np.mean(np.abs(out - x)) > 0
        recovered = np.log((np.exp(out) - (1 - lam) * np.exp(x)) / lam)
        assert recovered.std() == pytest.approx(0.2, rel=0.10)
        assert abs(recovered.mean()) < 0.01


class TestTimeStretch:
    def test_identity_factor(self):
        w = tone(220, seconds=1.0)
        out = time_stretch(w, 1.0)
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_length_contract(self):
        w = tone(220, seconds=1.0)
        out = time_stretch(w, 1.05)
        assert abs(out.samples.size - 16800) <= 256

    def test_pitch_preserved_when_compressing(self):
        w = tone(220, seconds=2.0)
        out = time_stretch(w, 0.95)
        assert fourier_peak_hz(out) == pytest.approx(220, rel=0.02)

    def test_pitch_preserved_when_expanding(self):
        w = tone(330, seconds=2.0)
        out = time_stretch(w, 1.05)
        assert fourier_peak_hz(out) == pytest.approx(330, rel=0.02)

    def test_factor_bounds(self):
        with pytest.raises(ValueError):
            time_stretch(tone(100), 2.5)


class TestPitchShift:
    def test_zero_shift_identity(self):
        w = tone(220)
        out = pitch_shift(w, 0)
        corr = np.corrcoef(out.samples, w.samples)[0, 1]
        assert corr >= 0.99

    def test_octave_up(self):
        out = pitch_shift(tone(220, seconds=2.0), 12)
        assert fourier_peak_hz(out) == pytest.approx(440, rel=0.02)

    def test_one_semitone_down(self):
        out = pitch_shift(tone(220, seconds=2.0), -1)
        assert fourier_peak_hz(out) == pytest.approx(220 * 2 ** (-1 / 12), rel=0.02)

    def test_one_semitone_up(self):
        out = pitch_shift(tone(220, seconds=2.0), 1)
        assert fourier_peak_hz(out) == pytest.approx(220 * 2 ** (1 / 12), rel=0.02)

    def test_duration_preserved_exactly(self):
        w = tone(180, seconds=1.3)
        assert pitch_shift(w, 1).samples.size == w.samples.size

    def test_roundtrip_restores_fundamental(self):
        w = tone(220, seconds=2.0)
        back = pitch_shift(pitch_shift(w, 1), -1)
        assert fourier_peak_hz(back) == pytest.approx(220, rel=0.02)

    def test_range_check(self):
        with pytest.raises(ValueError):
            pitch_shift(tone(100), 13)


class TestNoiseMix:
    def test_equal_power_unit_gain(self):
        sig = tone(220, seconds=0.5)
        noise = Waveform(np.roll(sig.samples, 100), 16000)  # same power
        rng = ScriptedRng([("integers", 0)])
        out = mix_noise_at_snr(sig, noise, 0.0, rng)
        np.testing.assert_allclose(out.samples, sig.samples + noise.samples, atol=1e-12)

    def test_snr20_scales_amplitude_tenth(self):
        sig = tone(220, seconds=0.5)
        noise = tone(1000, seconds=0.5)
        out0 = mix_noise_at_snr(sig, noise, 0.0, ScriptedRng([("integers", 0)]))
        out20 = mix_noise_at_snr(sig, noise, 20.0, ScriptedRng([("integers", 0)]))
        added0 = out0.samples - sig.samples
        added20 = out20.samples - sig.samples
        np.testing.assert_allclose(added20, added0 * 0.1, atol=1e-12)

    def test_achieved_snr_exact(self):
        rng = np.random.default_rng(14)
        sig = Waveform(rng.uniform(-0.5, 0.5, 8000), 16000)
        noise = Waveform(rng.uniform(-0.3, 0.3, 20000), 16000)
        out = mix_noise_at_snr(sig, noise, 5.0, rng)
        added = out.samples - sig.samples
        measured = 10 * np.log10(np.mean(sig.samples**2) / np.mean(added**2))
        assert measured == pytest.approx(5.0, abs=0.1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([5.0, 10.0, 25.0]))
    def test_snr_property(self, seed, snr):
        rng = np.random.default_rng(seed)
        sig = Waveform(rng.standard_normal(4000) * 0.2, 16000)
        noise = Waveform(rng.standard_normal(1500) * 0.1, 16000)  # tiled
        out = mix_noise_at_snr(sig, noise, snr, rng)
        added = out.samples - sig.samples
        measured = 10 * np.log10(np.mean(sig.samples**2) / np.mean(added**2))
        assert abs(measured - snr) <= 0.1

    def test_zero_signal_degenerate(self):
        with pytest.raises(ValueError, match="degenerate power"):
            mix_noise_at_snr(
                Waveform(np.zeros(100), 16000), tone(100, 0.1), 5.0, np.random.default_rng(0)
            )

    def test_rate_mismatch(self):
        with pytest.raises(ValueError, match="rate"):
            mix_noise_at_snr(tone(100, 0.1, sr=16000), tone(100, 0.1, sr=8000), 5.0, np.random.default_rng(0))


class TestPostNormalize:
    def test_constant_batch_zeros(self):
        out = post_normalize([np.full((10, 4), 7.0)])
        np.testing.assert_array_equal(out[0], 0.0)

    def test_two_cell_batch(self):
        out = post_normalize([np.array([[0.0, 2.0]])])
        assert out[0].mean() == 0.0
        assert out[0].std() == pytest.approx(1.0)

    def test_definitional_property(self):
        rng = np.random.default_rng(15)
        batch = [rng.standard_normal((30, 16)) * 3 + 2 for _ in range(5)]
        out = post_normalize(batch)
        cells = np.concatenate([o.ravel() for o in out])
        assert abs(cells.mean()) < 1e-6
        assert cells.std() == pytest.approx(1.0, abs=1e-5)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            post_normalize([])


def _quiet_policy(**overrides):
    base = dict(
        p_prosodic=0.0, p_noise=0.0, p_gaussian=0.0,
        enable_mixup=False, enable_rrc=False, enable_noise=False, enable_gaussian=False,
        rrc_freq_range=(1.0, 1.0), rrc_time_range=(1.0, 1.0),
    )
    base.update(overrides)
    return AugmentationPolicy(**base)


class TestMakeViewPair:
    CFG = MelConfig()
    STATS = NormStats(-10.0, 4.0)

    def test_all_identity_pipeline(self):
        w = tone(300, seconds=1.0)
        pair = make_view_pair(
            w, self.STATS, _quiet_policy(), MixupBank(4), np.random.default_rng(0), self.CFG
        )
        expected = apply_norm(log_mel(w, self.CFG), self.STATS)
        np.testing.assert_allclose(pair.u, expected, atol=1e-12)
        np.testing.assert_array_equal(pair.u, pair.u_prime)

    def test_same_seed_bit_identical(self):
        w = tone(250, seconds=1.5)
        noise = [tone(3000, seconds=1.0)]
        pairs = []
        for _ in range(2):
            pairs.append(
                make_view_pair(
                    w, self.STATS, AugmentationPolicy(), MixupBank(8),
                    np.random.default_rng(42), self.CFG, noise_bank=noise,
                )
            )
        assert pairs[0].u.tobytes() == pairs[1].u.tobytes()
        assert pairs[0].u_prime.tobytes() == pairs[1].u_prime.tobytes()

    def test_views_differ_under_augmentation(self):
        w = tone(250, seconds=1.5)
        pair = make_view_pair(
            w, self.STATS, AugmentationPolicy(enable_noise=False, p_prosodic=1.0),
            MixupBank(8), np.random.default_rng(1), self.CFG,
        )
        assert not np.allclose(pair.u, pair.u_prime)

    def test_segment_shapes(self):
        w = tone(200, seconds=2.3)
        pair = make_view_pair(
            w, self.STATS, _quiet_policy(), MixupBank(4), np.random.default_rng(2), self.CFG
        )
        assert pair.u.shape == (100, 64)
        assert pair.u_prime.shape == (100, 64)

    def test_too_short_utterance(self):
        w = tone(200, seconds=0.5)
        with pytest.raises(ValueError, match="shorter than one segment"):
            make_view_pair(w, self.STATS, _quiet_policy(), MixupBank(4), np.random.default_rng(3), self.CFG)

    def test_noise_enabled_without_corpus_raises(self):
        w = tone(200, seconds=1.5)
        with pytest.raises(ValueError, match="noise"):
            make_view_pair(
                w, self.STATS, _quiet_policy(p_noise=1.0, enable_noise=True),
                MixupBank(4), np.random.default_rng(4), self.CFG,
            )

    def test_stretch_alignment_maps_shared_start(self):
        # scripted draws: view A stretches 1.05, view B 0.95; the pair's start
        # is drawn in un-stretched samples and mapped through each factor
        w = Waveform(np.random.default_rng(5).uniform(-0.4, 0.4, 32000), 16000)
        policy = _quiet_policy(
            p_prosodic=1.0, pitch_semitones=(0.0,), stretch_factors=(0.95, 1.05)
        )
        start = 4000
        rng = ScriptedRng([
            ("random", 0.0), ("integers", 0), ("integers", 1),  # view A: coin, pitch 0, stretch 1.05
            ("random", 0.0), ("integers", 0), ("integers", 0),  # view B: coin, pitch 0, stretch 0.95
            ("integers", start),
        ])
        pair = make_view_pair(w, self.STATS, policy, MixupBank(4), rng, self.CFG)
        hop = self.CFG.hop_samples
        for view, factor in ((pair.u, 1.05), (pair.u_prime, 0.95)):
            stretched = time_stretch(pitch_shift(w, 0.0), factor)
            spec = apply_norm(log_mel(stretched, self.CFG), self.STATS)
            first = int(round(factor * start / hop))
            np.testing.assert_array_equal(view, spec[first : first + 100])

    def test_mixup_bank_shared_across_views(self):
        w = tone(220, seconds=1.2)
        bank = MixupBank(8)
        make_view_pair(
            w, self.STATS, _quiet_policy(enable_mixup=True), bank, np.random.default_rng(6), self.CFG
        )
        assert len(bank) == 2  # both views pushed their linear segments
