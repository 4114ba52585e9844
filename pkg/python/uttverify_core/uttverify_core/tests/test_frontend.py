import math
import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from ..exceptions import FeatureDimensionError, FrameError, UnsupportedAudioError
from ..frontend import (
    FeatureMatrix,
    FrontendConfig,
    Waveform,
    append_deltas,
    compute_mfcc,
    dct_ii,
    featurize,
    filter_edges_hz,
    load_wav,
    log_mel_energies,
    mel_filterbank,
    read_features,
    write_features,
    write_wav,
)

SR = 16000


def tone(freq_hz, seconds=0.4, amplitude=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return Waveform(samples=amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate=SR)


class WavTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_load_mono_pcm16(self):
        data = np.zeros(1600, dtype=np.int16)
        data[3] = 32767
        data[4] = -32768
        wavfile.write(self.tmp / "a.wav", SR, data)

        w = load_wav(self.tmp / "a.wav")
        assert w.sample_rate == 16000
        assert len(w.samples) == 1600
        assert w.samples[3] == 32767 / 32768
        assert w.samples[4] == -1.0

    def test_stereo_rejected(self):
        wavfile.write(self.tmp / "stereo.wav", SR, np.zeros((100, 2), dtype=np.int16))
        with self.assertRaises(UnsupportedAudioError) as ctx:
            load_wav(self.tmp / "stereo.wav")
        assert "mono" in str(ctx.exception)

    def test_non_16_bit_rejected(self):
        wavfile.write(self.tmp / "wide.wav", SR, np.zeros(100, dtype=np.int32))
        with self.assertRaises(UnsupportedAudioError) as ctx:
            load_wav(self.tmp / "wide.wav")
        assert "not 16-bit PCM" in str(ctx.exception)

    def test_24_bit_rejected(self):
        samples = b"\x00\x00\x01" * 100
        header = struct.pack("<4sI4s", b"RIFF", 36 + len(samples), b"WAVE")
        fmt = struct.pack("<4sIHHIIHH", b"fmt ", 16, 1, 1, SR, SR * 3, 3, 24)
        data = struct.pack("<4sI", b"data", len(samples)) + samples
        (self.tmp / "deep.wav").write_bytes(header + fmt + data)
        with self.assertRaises(UnsupportedAudioError) as ctx:
            load_wav(self.tmp / "deep.wav")
        assert "not 16-bit PCM" in str(ctx.exception)
        assert "32-bit" not in str(ctx.exception)

    def test_float_rejected(self):
        wavfile.write(self.tmp / "float.wav", SR, np.zeros(100, dtype=np.float32))
        with self.assertRaises(UnsupportedAudioError) as ctx:
            load_wav(self.tmp / "float.wav")
        assert "non-PCM" in str(ctx.exception)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_wav(self.tmp / "nope.wav")

    def test_write_then_load(self):
        w = tone(440.0, seconds=0.05)
        write_wav(self.tmp / "tone.wav", w)
        back = load_wav(self.tmp / "tone.wav")
        np.testing.assert_allclose(back.samples, w.samples, atol=1 / 32768)


def test_waveform_rejects_non_finite():
    with pytest.raises(ValueError):
        Waveform(samples=[0.0, float("nan")], sample_rate=SR)
    with pytest.raises(ValueError):
        Waveform(samples=[0.0], sample_rate=0)


def test_config_invariants():
    with pytest.raises(ValueError):
        FrontendConfig(frame_length_ms=10, frame_shift_ms=25)
    with pytest.raises(ValueError):
        FrontendConfig(num_mel_filters=10)
    with pytest.raises(ValueError):
        FrontendConfig(fft_size=500)
    assert FrontendConfig().fingerprint() == FrontendConfig().fingerprint()
    assert FrontendConfig().fingerprint() != FrontendConfig(pre_emphasis=0.9).fingerprint()


def test_zero_signal_gives_identical_finite_frames():
    w = Waveform(samples=np.zeros(int(0.4 * SR)), sample_rate=SR)
    feat = compute_mfcc(w, FrontendConfig())
    assert feat.dim == 13
    assert feat.num_frames == 1 + (6400 - 400) // 160
    assert np.all(np.isfinite(feat.frames))
    assert np.all(feat.frames == feat.frames[0])


@pytest.mark.parametrize("length", [400, 401, 559, 560, 561, 4000, 12345])
def test_frame_count_formula(length):
    rng = np.random.default_rng(length)
    w = Waveform(samples=rng.uniform(-1, 1, length), sample_rate=SR)
    feat = compute_mfcc(w)
    assert feat.num_frames == 1 + math.floor((length - 400) / 160)


def test_too_short_for_a_frame():
    with pytest.raises(FrameError):
        compute_mfcc(Waveform(samples=np.zeros(399), sample_rate=SR))


def test_filterbank_matches_triangle_definition():
    cfg = FrontendConfig()
    fb = mel_filterbank(cfg, SR)
    edges = filter_edges_hz(cfg, SR)
    nfft = cfg.nfft(SR)
    assert fb.shape == (26, nfft // 2 + 1)
    for k in range(26):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        for b in range(nfft // 2 + 1):
            f = b * SR / nfft
            if lo <= f <= mid:
                expected = (f - lo) / (mid - lo)
            elif mid < f <= hi:
                expected = (hi - f) / (hi - mid)
            else:
                expected = 0.0
            assert fb[k, b] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("k", [8, 12, 18])
def test_sine_at_filter_center_peaks_in_that_filter(k):
    cfg = FrontendConfig()
    center = filter_edges_hz(cfg, SR)[k + 1]
    energies = log_mel_energies(tone(center), cfg)
    # every frame is steady: the tone covers the whole signal
    assert np.all(np.argmax(energies, axis=1) == k)


def test_dct_matches_direct_summation():
    rng = np.random.default_rng(7)
    x = rng.normal(size=26) * 5.0
    N = len(x)
    expected = []
    for k in range(13):
        scale = math.sqrt(1.0 / N) if k == 0 else math.sqrt(2.0 / N)
        total = 0.0
        for n in range(N):
            total += x[n] * math.cos(math.pi * k * (2 * n + 1) / (2 * N))
        expected.append(scale * total)
    np.testing.assert_allclose(dct_ii(x, 13), expected, rtol=0, atol=1e-10)


def test_deltas_of_constant_are_exactly_zero():
    feat = FeatureMatrix(frames=np.tile(np.arange(13.0), (20, 1)))
    out = append_deltas(feat, 2)
    assert out.dim == 39
    assert out.num_frames == 20
    assert np.all(out.frames[:, 13:] == 0.0)
    np.testing.assert_array_equal(out.frames[:, :13], feat.frames)


def test_deltas_single_frame():
    out = append_deltas(FeatureMatrix(frames=np.ones((1, 13))), 2)
    assert np.all(out.frames[:, 13:] == 0.0)


def test_deltas_of_ramp():
    v = np.linspace(-1.0, 2.0, 13)
    frames = np.arange(12)[:, None] * v[None, :]
    out = append_deltas(FeatureMatrix(frames=frames), 2)
    for t in range(2, 10):
        np.testing.assert_allclose(out.frames[t, 13:26], v, atol=1e-12)


def test_deltas_need_13_dims():
    with pytest.raises(FeatureDimensionError):
        append_deltas(FeatureMatrix(frames=np.zeros((5, 39))), 2)


def test_featurize_is_deterministic():
    rng = np.random.default_rng(1)
    w = Waveform(samples=rng.uniform(-0.5, 0.5, 8000), sample_rate=SR)
    a = featurize(w)
    b = featurize(w)
    assert a.dim == 39
    assert np.array_equal(a.frames, b.frames)
    assert a.fingerprint == FrontendConfig().fingerprint()


def test_shift_covariance():
    cfg = FrontendConfig()
    rng = np.random.default_rng(3)
    body = np.concatenate([np.zeros(800), rng.uniform(-0.5, 0.5, 4000), np.zeros(800)])
    S = 4
    padded = np.concatenate([np.zeros(S * cfg.shift_samples(SR)), body])
    a = compute_mfcc(Waveform(samples=body, sample_rate=SR), cfg)
    b = compute_mfcc(Waveform(samples=padded, sample_rate=SR), cfg)
    assert b.num_frames == a.num_frames + S
    np.testing.assert_allclose(b.frames[S:], a.frames, rtol=1e-12, atol=1e-12)


def test_outputs_finite_for_extreme_inputs():
    samples = np.zeros(4000)
    samples[::2] = 1.0
    samples[1::2] = -1.0
    samples[:100] = 1e-300
    feat = featurize(Waveform(samples=samples, sample_rate=SR))
    assert np.all(np.isfinite(feat.frames))


def test_feature_dump_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    feat = FeatureMatrix(frames=rng.normal(size=(7, 39)) * 1e3, fingerprint="abc123")
    write_features(tmp_path / "f.txt", feat)

    header = (tmp_path / "f.txt").read_text().splitlines()[0]
    assert header == "# 7 39 10.0 abc123"
    back = read_features(tmp_path / "f.txt")
    assert np.array_equal(back.frames, feat.frames)
    assert back.fingerprint == "abc123"
    assert back.frame_shift_ms == 10.0


def test_feature_dump_shape_mismatch(tmp_path):
    (tmp_path / "bad.txt").write_text("# 3 13 10.0 -\n" + "0 " * 13 + "\n")
    with pytest.raises(FeatureDimensionError):
        read_features(tmp_path / "bad.txt")


@pytest.mark.parametrize("value", ["nan", "inf", "abc"])
def test_feature_dump_bad_values(tmp_path, value):
    (tmp_path / "bad.txt").write_text("# 2 13 10.0 -\n" + "0 " * 13 + "\n" + "0 " * 12 + value + "\n")
    with pytest.raises(FeatureDimensionError, match="bad.txt"):
        read_features(tmp_path / "bad.txt")
