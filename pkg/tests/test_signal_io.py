import struct

import numpy as np
import pytest

from sepcost.errors import CorruptFile, ShapeError, SilentSignal, UnsupportedFormat
from sepcost.signal_io import Waveform, mix_at_snr, read_wav, resample, write_wav


def make_wav_bytes(payload: bytes, fmt_tag=1, channels=1, rate=16000, bits=16) -> bytes:
    block = channels * bits // 8
    return (
        b"RIFF"
        + struct.pack("<I", 36 + len(payload))
        + b"WAVE"
        + b"fmt "
        + struct.pack("<IHHIIHH", 16, fmt_tag, channels, rate, rate * block, block, bits)
        + b"data"
        + struct.pack("<I", len(payload))
        + payload
    )


def test_pcm16_scaling(tmp_path):
    path = tmp_path / "a.wav"
    path.write_bytes(make_wav_bytes(struct.pack("<3h", 0, 16384, -32768)))
    w = read_wav(path)
    assert w.sample_rate == 16000
    np.testing.assert_array_equal(w.samples, [0.0, 0.5, -1.0])


def test_stereo_averaged_to_mono(tmp_path):
    path = tmp_path / "st.wav"
    path.write_bytes(make_wav_bytes(struct.pack("<2h", 32768 // 2, 0), channels=2))
    w = read_wav(path)
    assert len(w) == 1
    assert w.samples[0] == pytest.approx(0.25, abs=1e-4)


def test_float32_read(tmp_path):
    path = tmp_path / "f.wav"
    vals = np.array([0.25, -0.5, 1.0], dtype="<f4")
    path.write_bytes(make_wav_bytes(vals.tobytes(), fmt_tag=3, bits=32))
    w = read_wav(path)
    np.testing.assert_allclose(w.samples, [0.25, -0.5, 1.0], atol=1e-7)


def test_write_quantization(tmp_path):
    path = tmp_path / "q.wav"
    write_wav(Waveform(np.array([0.0]), 8000), path)
    assert struct.unpack("<h", path.read_bytes()[-2:])[0] == 0
    write_wav(Waveform(np.array([2.0]), 8000), path)
    assert struct.unpack("<h", path.read_bytes()[-2:])[0] == 32767
    write_wav(Waveform(np.array([-1.0]), 8000), path)
    assert struct.unpack("<h", path.read_bytes()[-2:])[0] == -32768


def test_round_trip_within_half_lsb(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(5):
        x = rng.uniform(-1.0, 1.0, size=977)
        x[:3] = [1.0, -1.0, 0.0]  # include the clamp boundary
        path = tmp_path / f"rt{trial}.wav"
        write_wav(Waveform(x, 16000), path)
        back = read_wav(path)
        assert back.sample_rate == 16000
        assert np.abs(back.samples - x).max() <= 1.0 / 32768.0


def test_read_rejects_non_wave(tmp_path):
    path = tmp_path / "nope.wav"
    path.write_bytes(b"OggS" + bytes(64))
    with pytest.raises(UnsupportedFormat):
        read_wav(path)


def test_read_rejects_unknown_codec(tmp_path):
    path = tmp_path / "alaw.wav"
    path.write_bytes(make_wav_bytes(bytes(8), fmt_tag=6))
    with pytest.raises(UnsupportedFormat):
        read_wav(path)


def test_read_rejects_truncated(tmp_path):
    path = tmp_path / "trunc.wav"
    blob = make_wav_bytes(struct.pack("<4h", 1, 2, 3, 4))
    path.write_bytes(blob[:-5])
    with pytest.raises(CorruptFile):
        read_wav(path)


def test_resample_identity():
    rng = np.random.default_rng(1)
    w = Waveform(rng.standard_normal(500), 16000)
    r = resample(w, 16000)
    np.testing.assert_array_equal(r.samples, w.samples)
    assert r.samples is not w.samples


def test_resample_sinusoid_oracle():
    # analytic target: the same sinusoid sampled on the new grid
    fs, fd, f0 = 16000, 10000, 1000.0
    t = np.arange(1600) / fs
    w = Waveform(np.sin(2 * np.pi * f0 * t), fs)
    r = resample(w, fd)
    assert len(r) == round(1600 * fd / fs)
    ref = np.sin(2 * np.pi * f0 * np.arange(len(r)) / fd)
    assert np.abs(r.samples[64:-64] - ref[64:-64]).max() < 1e-3


def test_resample_dc_preserved():
    w = Waveform(np.full(800, 0.37), 16000)
    r = resample(w, 11025)
    assert np.abs(r.samples - 0.37).max() < 1e-6


def test_resample_duration_preserved():
    rng = np.random.default_rng(2)
    for fd in (8000, 10000, 22050, 44100):
        w = Waveform(rng.standard_normal(4321), 16000)
        r = resample(w, fd)
        assert abs(r.duration - w.duration) <= 1.0 / fd


def test_mix_scale_from_rms_ratio():
    y = Waveform(np.full(100, 0.1), 8000)
    z = Waveform(np.full(100, 0.2), 8000)
    pair = mix_at_snr(y, z, 0.0)
    np.testing.assert_allclose(pair.interference.samples, 0.5 * z.samples)


def test_mix_zero_db_matches_rms():
    rng = np.random.default_rng(3)
    y = Waveform(rng.standard_normal(4000) * 0.03, 16000)
    z = Waveform(rng.standard_normal(4000) * 0.4, 16000)
    pair = mix_at_snr(y, z, 0.0)
    assert pair.target.rms() == pytest.approx(pair.interference.rms(), rel=1e-9)


def test_mix_sixty_db():
    rng = np.random.default_rng(4)
    y = Waveform(rng.standard_normal(1000), 8000)
    z = Waveform(rng.standard_normal(1000), 8000)
    pair = mix_at_snr(y, z, 60.0)
    assert pair.interference.rms() == pytest.approx(pair.target.rms() * 1e-3, rel=1e-9)


def test_mix_sum_is_exact_and_truncates():
    rng = np.random.default_rng(5)
    y = Waveform(rng.standard_normal(900), 8000)
    z = Waveform(rng.standard_normal(1100), 8000)
    pair = mix_at_snr(y, z, 3.0)
    assert len(pair.mixture) == 900
    # no re-quantization: the mixture is bitwise the sum of the returned parts
    np.testing.assert_array_equal(
        pair.mixture.samples, pair.target.samples + pair.interference.samples
    )


def test_mix_rejects_silence_and_rate_mismatch():
    loud = Waveform(np.full(100, 0.5), 8000)
    with pytest.raises(SilentSignal):
        mix_at_snr(Waveform(np.zeros(100) + 1e-12, 8000), loud, 0.0)
    with pytest.raises(ShapeError):
        mix_at_snr(loud, Waveform(np.full(100, 0.5), 16000), 0.0)


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.array([np.nan]), 8000)
    with pytest.raises(ValueError):
        Waveform(np.array([0.0]), 0)
    with pytest.raises(ShapeError):
        Waveform(np.zeros((2, 2)), 8000)
