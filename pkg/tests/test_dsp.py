import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retimbre import dsp
from retimbre.dsp import AudioClip, MelFeatureConfig
from retimbre.errors import DataError

from _oracles import naive_stft_magnitude, reference_log_mel

RATE = 16000


def _clip(samples, rate=RATE):
    return AudioClip(samples=np.asarray(samples, dtype=np.float32), sample_rate=rate)


class TestWavIO:
    def test_pcm16_full_scale_reads_as_one(self, tmp_path):
        import scipy.io.wavfile

        data = np.array([32767, 0, -32767], dtype=np.int16)
        scipy.io.wavfile.write(tmp_path / "x.wav", RATE, data)
        clip = dsp.load_wav(tmp_path / "x.wav")
        assert clip.samples.max() == pytest.approx(1.0)
        assert clip.sample_rate == RATE

    def test_one_second_file_has_rate_samples(self, tmp_path, make_sine):
        dsp.write_wav(tmp_path / "x.wav", make_sine(seconds=1.0))
        assert dsp.load_wav(tmp_path / "x.wav").num_samples == RATE

    def test_stereo_44k_roundtrip_bit_exact(self, tmp_path):
        # known stereo fixture, float WAV: read back must match bit-exactly
        rng = np.random.default_rng(7)
        stereo = rng.uniform(-0.9, 0.9, (4410, 2)).astype(np.float32)
        path = tmp_path / "stereo.wav"
        dsp.write_wav(path, AudioClip(samples=stereo, sample_rate=44100))
        clip = dsp.load_wav(path)
        assert clip.sample_rate == 44100
        assert clip.num_channels == 2
        np.testing.assert_array_equal(clip.samples, stereo)

    def test_pcm16_roundtrip_within_one_lsb(self, tmp_path, rng):
        samples = rng.uniform(-1, 1, 2000).astype(np.float32)
        path = tmp_path / "x.wav"
        dsp.write_wav(path, _clip(samples), encoding="pcm16")
        back = dsp.load_wav(path)
        assert np.max(np.abs(back.samples - samples)) <= 1.0 / 32767

    def test_float_roundtrip_bit_exact(self, tmp_path, rng):
        samples = rng.uniform(-1, 1, 2000).astype(np.float32)
        path = tmp_path / "x.wav"
        dsp.write_wav(path, _clip(samples))
        np.testing.assert_array_equal(dsp.load_wav(path).samples, samples)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(DataError):
            dsp.load_wav(tmp_path / "nope.wav")

    def test_garbage_file_raises(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"not a wav at all")
        with pytest.raises(DataError):
            dsp.load_wav(tmp_path / "bad.wav")


class TestToMono:
    def test_mono_identity(self, make_sine):
        clip = make_sine()
        out = dsp.to_mono(clip)
        np.testing.assert_array_equal(out.samples, clip.samples)

    def test_opposite_channels_cancel(self):
        stereo = np.stack([np.ones(100), -np.ones(100)], axis=1).astype(np.float32)
        out = dsp.to_mono(AudioClip(samples=stereo, sample_rate=RATE))
        np.testing.assert_array_equal(out.samples, np.zeros(100, dtype=np.float32))

    def test_channel_mean(self):
        stereo = np.stack([np.full(50, 0.5), np.full(50, 0.1)], axis=1).astype(np.float32)
        out = dsp.to_mono(AudioClip(samples=stereo, sample_rate=RATE))
        np.testing.assert_allclose(out.samples, 0.3, atol=1e-7)

    def test_empty_clip_rejected(self):
        with pytest.raises(DataError):
            dsp.to_mono(AudioClip(samples=np.zeros((0,), dtype=np.float32), sample_rate=RATE))


class TestTrimSilence:
    def test_active_pair_unchanged(self, rng):
        a = _clip(0.5 * rng.standard_normal(RATE).clip(-1, 1))
        b = _clip(0.5 * rng.standard_normal(RATE).clip(-1, 1))
        out_a, out_b = dsp.trim_silence((a, b), threshold_db=-40.0)
        np.testing.assert_array_equal(out_a.samples, a.samples)
        np.testing.assert_array_equal(out_b.samples, b.samples)

    def test_gap_in_one_stream_cuts_both(self, rng):
        # A silent on [2s, 4s); B active everywhere. Boundaries are hand-checked
        # against the 50 ms windowed RMS: windows 40..79 are silent in A.
        n = 6 * RATE
        a = (0.3 * rng.standard_normal(n)).clip(-1, 1).astype(np.float32)
        b = (0.3 * rng.standard_normal(n)).clip(-1, 1).astype(np.float32)
        a[2 * RATE : 4 * RATE] = 0.0
        window = int(0.05 * RATE)
        db = 20 * np.log10(np.sqrt((a.reshape(-1, window) ** 2).mean(axis=1)) + 1e-10)
        silent_windows = np.nonzero(db < -40.0)[0]
        assert silent_windows.min() == 40 and silent_windows.max() == 79
        out_a, out_b = dsp.trim_silence((_clip(a), _clip(b)), threshold_db=-40.0, min_gap_s=0.3)
        assert out_a.num_samples == out_b.num_samples == n - 2 * RATE
        np.testing.assert_array_equal(out_a.samples, np.concatenate([a[: 2 * RATE], a[4 * RATE :]]))
        np.testing.assert_array_equal(out_b.samples, np.concatenate([b[: 2 * RATE], b[4 * RATE :]]))

    def test_short_gaps_kept(self, rng):
        n = 2 * RATE
        a = (0.3 * rng.standard_normal(n)).clip(-1, 1).astype(np.float32)
        a[RATE : RATE + int(0.1 * RATE)] = 0.0  # 100 ms < default 300 ms gap
        out_a, _ = dsp.trim_silence((_clip(a), _clip(a)), min_gap_s=0.3)
        assert out_a.num_samples == n

    def test_all_silent_degenerate(self):
        zero = _clip(np.zeros(RATE, dtype=np.float32))
        out_a, out_b = dsp.trim_silence((zero, zero))
        assert out_a.num_samples == 0 and out_b.num_samples == 0

    def test_misaligned_pair_rejected(self, make_sine):
        with pytest.raises(DataError):
            dsp.trim_silence((make_sine(seconds=1.0), make_sine(seconds=2.0)))


class TestFragment:
    def test_twelve_seconds_gives_two(self, make_sine):
        parts = dsp.fragment(make_sine(seconds=12.0), seconds=5.0)
        assert len(parts) == 2
        assert all(p.num_samples == 5 * RATE for p in parts)

    def test_exact_length_gives_one(self, make_sine):
        assert len(dsp.fragment(make_sine(seconds=5.0), seconds=5.0)) == 1

    def test_below_minimum_gives_none(self, make_sine):
        assert dsp.fragment(make_sine(seconds=4.9), seconds=5.0) == []

    def test_pair_boundaries_identical(self, rng):
        a = _clip(0.1 * rng.standard_normal(11 * RATE))
        b = _clip(0.1 * rng.standard_normal(11 * RATE))
        pairs = dsp.fragment_pair(a, b, seconds=5.0)
        assert len(pairs) == 2
        for fa, fb in pairs:
            assert fa.num_samples == fb.num_samples == 5 * RATE
        np.testing.assert_array_equal(pairs[1][0].samples, a.samples[5 * RATE : 10 * RATE])


class TestLogMel:
    def test_one_second_shape(self, make_sine):
        mel = dsp.log_mel(make_sine(seconds=1.0), MelFeatureConfig())
        assert mel.values.shape == (54, 128)

    def test_zero_clip_is_log_floor(self):
        cfg = MelFeatureConfig()
        mel = dsp.log_mel(_clip(np.zeros(RATE, dtype=np.float32)), cfg)
        np.testing.assert_allclose(mel.values, np.log(cfg.log_floor), rtol=1e-6)

    def test_sine_peaks_in_band_containing_440(self, make_sine):
        cfg = MelFeatureConfig()
        mel = dsp.log_mel(make_sine(freq=440.0, seconds=1.0), cfg)
        band = int(np.argmax(mel.values.mean(axis=0)))
        lo, _, hi = dsp.mel_band_edges(cfg, RATE)[band]
        assert lo <= 440.0 <= hi

    def test_stereo_rejected(self):
        stereo = np.zeros((RATE, 2), dtype=np.float32)
        with pytest.raises(DataError):
            dsp.log_mel(AudioClip(samples=stereo, sample_rate=RATE), MelFeatureConfig())

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            dsp.log_mel(_clip(np.zeros(100, dtype=np.float32)), MelFeatureConfig())

    def test_matches_independent_reference(self, rng):
        # production path (numpy rfft framing) vs naive DFT-matrix oracle
        x = (0.4 * rng.standard_normal(4800)).clip(-1, 1).astype(np.float32)
        cfg = MelFeatureConfig()
        ours = dsp.log_mel(_clip(x), cfg).values
        ref = reference_log_mel(x, RATE)
        assert ours.shape == ref.shape
        np.testing.assert_allclose(ours, ref, rtol=1e-5, atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=300, max_value=20000))
    def test_frame_count_formula(self, n):
        cfg = MelFeatureConfig()
        x = np.zeros(n, dtype=np.float32)
        x[0] = 0.1
        mel = dsp.log_mel(_clip(x), cfg)
        assert mel.num_frames == n // cfg.hop_length + 1

    def test_parseval_energy_ratio(self, rng):
        # sum over hop-shifted squared Hann windows is exactly 1.5 for
        # window 1200 / hop 300, so total spectral energy (full spectrum)
        # should be fft_size * 1.5 * time energy, within 1% on white noise.
        cfg = MelFeatureConfig()
        x = rng.standard_normal(10 * RATE) * 0.2
        mag = dsp.stft_magnitude(x, cfg)
        full = 2 * (mag**2).sum() - (mag[:, 0] ** 2).sum() - (mag[:, -1] ** 2).sum()
        expected = cfg.fft_size * 1.5 * np.sum(x**2)
        assert abs(full / expected - 1.0) < 0.01

    def test_stft_against_naive_dft(self, rng):
        cfg = MelFeatureConfig()
        x = rng.standard_normal(2000) * 0.3
        ours = dsp.stft_magnitude(x, cfg)
        ref = naive_stft_magnitude(x, cfg.window_length, cfg.hop_length, cfg.fft_size)
        np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-9)


class TestResample:
    def test_equal_rate_is_identity(self, make_sine):
        clip = make_sine()
        out = dsp.resample(clip, RATE)
        assert out is clip

    def test_sine_frequency_preserved(self, make_sine):
        clip = make_sine(freq=440.0, seconds=1.0, rate=44100)
        out = dsp.resample(clip, 16000)
        spectrum = np.abs(np.fft.rfft(out.samples.astype(np.float64)))
        freqs = np.fft.rfftfreq(out.num_samples, 1 / 16000)
        assert abs(freqs[int(np.argmax(spectrum))] - 440.0) <= 1.0

    def test_length_ratio(self, make_sine):
        out = dsp.resample(make_sine(seconds=1.0, rate=44100), 16000)
        assert abs(out.num_samples - 16000) <= 1


class TestInvariants:
    def test_clip_rejects_nan(self):
        with pytest.raises(DataError):
            AudioClip(samples=np.array([0.0, np.nan], dtype=np.float32), sample_rate=RATE)

    def test_clip_rejects_out_of_range(self):
        with pytest.raises(DataError):
            AudioClip(samples=np.array([1.5], dtype=np.float32), sample_rate=RATE)

    def test_mel_config_bounds(self):
        with pytest.raises(DataError):
            MelFeatureConfig(hop_length=2000)  # hop > window
        with pytest.raises(DataError):
            MelFeatureConfig(n_mels=2000)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=8000, max_value=40000), st.integers(min_value=0, max_value=10**6))
    def test_trim_and_fragment_keep_pairs_aligned(self, n, seed):
        r = np.random.default_rng(seed)
        a = _clip((0.4 * r.standard_normal(n)).clip(-1, 1))
        b = _clip((0.4 * r.standard_normal(n)).clip(-1, 1))
        ta, tb = dsp.trim_silence((a, b))
        assert ta.num_samples == tb.num_samples
        pairs = dsp.fragment_pair(ta, tb, seconds=0.25)
        for fa, fb in pairs:
            assert fa.num_samples == fb.num_samples
