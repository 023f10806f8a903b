"""Frontend tests: framing arithmetic, Parseval energy check, filterbank
response at a tone, regression deltas on closed forms, and the sliding
normalizer's window statistics."""

import numpy as np
import pytest

from qasr.frontend import (
    FEATURE_DIM,
    FrontendConfig,
    LOG_FLOOR,
    add_deltas,
    extract_features,
    frame_signal,
    global_normalize,
    logmel_energy,
    mel_filterbank,
    read_feature_file,
    read_wav,
    sliding_normalize,
    write_feature_file,
)

CFG = FrontendConfig()


class TestFraming:
    def test_one_second_gives_98_frames(self):
        frames = frame_signal(np.zeros(16000))
        assert frames.shape == (98, 400)

    def test_too_short_gives_zero_frames(self):
        assert frame_signal(np.zeros(399)).shape[0] == 0

    def test_constant_signal_frames_identical(self):
        frames = frame_signal(np.ones(2000))
        for row in frames[1:]:
            np.testing.assert_array_equal(row, frames[0])

    def test_rejects_stereo(self):
        with pytest.raises(ValueError):
            frame_signal(np.zeros((100, 2)))


class TestLogmelEnergy:
    def test_silence_hits_log_floor(self):
        out = logmel_energy(np.zeros((3, 400)))
        np.testing.assert_array_equal(out, np.full((3, 41), LOG_FLOOR))

    def test_tone_at_filter_center_dominates(self):
        bank = mel_filterbank(CFG)
        bin_freqs = np.arange(CFG.n_fft // 2 + 1) * CFG.sample_rate / CFG.n_fft
        m = 20
        center = bin_freqs[np.argmax(bank[m])]
        t = np.arange(16000) / CFG.sample_rate
        tone = np.sin(2 * np.pi * center * t)
        out = logmel_energy(frame_signal(tone))
        mean = out[:, :40].mean(axis=0)
        assert mean[m] > mean[m - 2]
        assert mean[m] > mean[m + 2]

    def test_parseval_energy(self):
        rng = np.random.default_rng(1)
        frame = frame_signal(rng.normal(size=800))[0]
        out = logmel_energy(frame[None, :])
        direct = np.sum(frame**2)
        spec = np.fft.rfft(frame, n=CFG.n_fft)
        full = np.abs(spec) ** 2
        # rfft halves the spectrum; double interior bins for the full sum
        spectral = (2 * full.sum() - full[0] - full[-1]) / CFG.n_fft
        assert out[0, 40] == pytest.approx(np.log(direct), abs=1e-9)
        assert direct == pytest.approx(spectral, rel=1e-9)

    def test_filterbank_shape_and_support(self):
        bank = mel_filterbank(CFG)
        assert bank.shape == (40, 257)
        assert np.all(bank >= 0)
        assert np.all(bank.max(axis=1) > 0)


class TestDeltas:
    def test_constant_sequence_zero_deltas(self):
        out = add_deltas(np.ones((10, 41)) * 3.5)
        np.testing.assert_array_equal(out[:, 41:], np.zeros((10, 82)))

    def test_linear_ramp_interior_delta_one(self):
        ramp = np.arange(12, dtype=float)[:, None] * np.ones((1, 2))
        out = add_deltas(ramp)
        delta = out[:, 2:4]
        np.testing.assert_allclose(delta[2:-2], 1.0, atol=1e-12)
        ddelta = out[4:-4, 4:6]
        np.testing.assert_allclose(ddelta, 0.0, atol=1e-12)

    def test_single_frame_zero_deltas(self):
        out = add_deltas(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(out[0, 2:], np.zeros(4))

    def test_output_dim_is_123(self):
        out = add_deltas(np.zeros((5, 41)))
        assert out.shape == (5, FEATURE_DIM)


class TestSlidingNormalize:
    def test_constant_input_all_zero(self):
        out = sliding_normalize(np.full((50, 3), 7.0), window=10)
        np.testing.assert_array_equal(out, np.zeros((50, 3)))

    def test_interior_window_statistics(self):
        rng = np.random.default_rng(2)
        x = rng.normal(2.0, 3.0, size=(900, 4))
        window = 300
        out = sliding_normalize(x, window=window)
        t = 450
        half = (window - 1) // 2
        win = x[t - half : t + half + 1]
        mu = win.mean(axis=0)
        sd = win.std(axis=0)
        # the emitted frame used exactly this window's statistics
        np.testing.assert_allclose(out[t], (x[t] - mu) / sd, atol=1e-9)
        z = (win - mu) / sd
        assert np.abs(z.mean(axis=0)).max() < 1e-6
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=1e-3)

    def test_short_stream_degrades_to_global(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(40, 2))
        out = sliding_normalize(x, window=300)
        expected = (x - x.mean(axis=0)) / x.std(axis=0)
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_idempotent_on_stationary_window_stats(self):
        # period 13 divides the 299-frame effective span, so every fully
        # interior window sees identical statistics and a second pass changes
        # nothing; the slice keeps second-pass windows clear of first-pass
        # edge effects (two half-windows deep)
        rng = np.random.default_rng(4)
        pattern = rng.normal(size=(13, 3))
        x = np.tile(pattern, (80, 1))
        once = sliding_normalize(x, window=300)
        twice = sliding_normalize(once, window=300)
        interior = slice(300, -300)
        assert np.abs(twice[interior] - once[interior]).max() < 1e-6

    def test_causal_mode_uses_trailing_window(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(500, 2))
        out = sliding_normalize(x, window=100, causal=True)
        t = 400
        win = x[t - 99 : t + 1]
        expected = (x[t] - win.mean(axis=0)) / win.std(axis=0)
        np.testing.assert_allclose(out[t], expected, atol=1e-9)

    def test_std_floor_prevents_blowup(self):
        x = np.full((10, 2), 5.0)
        x[3, 0] += 1e-9
        out = sliding_normalize(x, window=4)
        assert np.isfinite(out).all()


class TestPipeline:
    def test_dimensions_and_determinism(self):
        rng = np.random.default_rng(6)
        audio = rng.uniform(-0.5, 0.5, size=16000)
        a = extract_features(audio)
        b = extract_features(audio)
        assert a.shape == (98, 123)
        np.testing.assert_array_equal(a, b)

    def test_constant_audio_normalizes_to_zero(self):
        out = extract_features(np.full(8000, 0.25))
        np.testing.assert_array_equal(out, np.zeros_like(out))

    def test_empty_audio(self):
        assert extract_features(np.zeros(10)).shape == (0, 123)

    def test_global_mode_requires_stats(self):
        with pytest.raises(ValueError, match="stats"):
            extract_features(np.zeros(16000), norm="global")

    def test_global_mode_applies_stats(self):
        rng = np.random.default_rng(7)
        audio = rng.uniform(-0.5, 0.5, size=8000)
        raw = extract_features(audio, norm="none")
        mean, std = raw.mean(axis=0), raw.std(axis=0)
        out = extract_features(audio, norm="global", stats=(mean, std))
        np.testing.assert_allclose(out, global_normalize(raw, mean, std), atol=1e-12)


class TestFiles:
    def test_feature_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        feats = rng.normal(size=(17, 123)).astype(np.float32)
        p = tmp_path / "x.feat"
        write_feature_file(p, feats, norm="causal")
        back, norm = read_feature_file(p)
        assert norm == "causal"
        np.testing.assert_array_equal(back, feats)

    def test_truncated_payload_rejected(self, tmp_path):
        p = tmp_path / "x.feat"
        write_feature_file(p, np.zeros((4, 123), dtype=np.float32))
        data = p.read_bytes()
        p.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="payload"):
            read_feature_file(p)

    def test_wav_round_trip(self, tmp_path):
        from scipy.io import wavfile

        rng = np.random.default_rng(9)
        pcm = (rng.uniform(-0.3, 0.3, size=16000) * 32768).astype(np.int16)
        p = tmp_path / "x.wav"
        wavfile.write(p, 16000, pcm)
        audio = read_wav(p)
        np.testing.assert_allclose(audio, pcm / 32768.0, atol=1e-9)

    def test_wav_wrong_rate_rejected(self, tmp_path):
        from scipy.io import wavfile

        p = tmp_path / "x.wav"
        wavfile.write(p, 8000, np.zeros(100, dtype=np.int16))
        with pytest.raises(ValueError, match="Hz"):
            read_wav(p)
