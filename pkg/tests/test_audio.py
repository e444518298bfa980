from __future__ import annotations

import wave

import numpy as np
import pytest

from avdkit import (
    AudioBuffer,
    compute_spectrogram,
    load_wav,
    read_spec_dump,
    resample_linear,
    save_wav,
    slice_windows,
    write_spec_dump,
)
from avdkit.audio import (
    DFT_SIZE,
    FREQ_BINS,
    HOP_S,
    HOP_SAMPLES,
    LOG_EPS,
    SAMPLE_RATE_HZ,
    WINDOW_FRAMES,
)


def _tone(freq_hz, duration_s, amp=0.5, rate=SAMPLE_RATE_HZ):
    t = np.arange(int(duration_s * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq_hz * t), rate)


def test_audio_buffer_invariants():
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros((2, 100)), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.zeros(10), 0)
    with pytest.raises(ValueError):
        AudioBuffer(np.array([2.0]), 16000)
    with pytest.raises(ValueError):
        AudioBuffer(np.array([np.nan]), 16000)
    buf = AudioBuffer(np.zeros(8000), 16000)
    assert buf.duration_s == 0.5


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    # samples already on the 16-bit grid round-trip exactly
    samples = rng.integers(-32768, 32768, 5000).astype(np.float64) / 32768.0
    path = tmp_path / "a.wav"
    save_wav(AudioBuffer(samples, SAMPLE_RATE_HZ), path)
    back = load_wav(path)
    assert back.sample_rate_hz == SAMPLE_RATE_HZ
    np.testing.assert_array_equal(back.samples, samples)


def test_load_wav_rejects_stereo_and_wrong_depth(tmp_path):
    stereo = tmp_path / "stereo.wav"
    with wave.open(str(stereo), "wb") as wav:
        wav.setnchannels(2)
        wav.setsampwidth(2)
        wav.setframerate(16000)
        wav.writeframes(b"\x00\x00" * 200)
    with pytest.raises(ValueError, match="mono"):
        load_wav(stereo)

    eight = tmp_path / "eight.wav"
    with wave.open(str(eight), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(1)
        wav.setframerate(16000)
        wav.writeframes(b"\x00" * 100)
    with pytest.raises(ValueError, match="16-bit"):
        load_wav(eight)


def test_load_wav_rejects_garbage_and_missing(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"this is not audio")
    with pytest.raises(ValueError, match="not a PCM WAV"):
        load_wav(bad)
    with pytest.raises(FileNotFoundError):
        load_wav(tmp_path / "nope.wav")


def test_resample_changes_length_proportionally():
    buf = _tone(440, 0.5, rate=8000)
    up = resample_linear(buf, 16000)
    assert up.sample_rate_hz == 16000
    assert up.samples.size == 2 * buf.samples.size
    assert resample_linear(buf, 8000) is buf


def test_spectrogram_frame_count_and_origin():
    n = SAMPLE_RATE_HZ  # 1 s
    spec = compute_spectrogram(AudioBuffer(np.zeros(n), SAMPLE_RATE_HZ))
    assert spec.num_frames == (n - DFT_SIZE) // HOP_SAMPLES + 1
    assert spec.frames.shape == (spec.num_frames, FREQ_BINS)
    assert spec.frames.dtype == np.float32
    assert spec.origin_time_s == (DFT_SIZE / 2) / SAMPLE_RATE_HZ
    np.testing.assert_allclose(
        spec.frame_times()[:3], [0.032, 0.032 + HOP_S, 0.032 + 2 * HOP_S]
    )


def test_spectrogram_silence_hits_log_floor():
    spec = compute_spectrogram(AudioBuffer(np.zeros(4000), SAMPLE_RATE_HZ))
    np.testing.assert_allclose(spec.frames, np.float32(np.log(LOG_EPS)))


def test_spectrogram_tone_bin():
    # 1 kHz / 15.625 Hz per bin = bin 64, on every frame
    spec = compute_spectrogram(_tone(1000.0, 1.0))
    assert (spec.frames.argmax(axis=1) == 64).all()


def test_spectrogram_rejects_wrong_rate_unless_asked():
    buf = _tone(440, 0.5, rate=8000)
    with pytest.raises(ValueError, match="16000"):
        compute_spectrogram(buf)
    spec = compute_spectrogram(buf, resample=True)
    assert spec.num_frames > 0


def test_spectrogram_rejects_too_short():
    with pytest.raises(ValueError, match="too short"):
        compute_spectrogram(AudioBuffer(np.zeros(DFT_SIZE - 1), SAMPLE_RATE_HZ))


def test_slice_windows_geometry():
    spec = compute_spectrogram(AudioBuffer(np.zeros(SAMPLE_RATE_HZ), SAMPLE_RATE_HZ))
    stride = 8
    windows = slice_windows(spec, stride)
    assert len(windows) == (spec.num_frames - WINDOW_FRAMES) // stride + 1
    for w in windows:
        assert w.image.shape == (FREQ_BINS, WINDOW_FRAMES)
    # window k starts at frame k*stride; center is mid-window on the frame grid
    expect0 = spec.origin_time_s + (WINDOW_FRAMES - 1) / 2 * HOP_S
    assert windows[0].center_time_s == pytest.approx(expect0)
    assert windows[1].center_time_s == pytest.approx(expect0 + stride * HOP_S)
    np.testing.assert_array_equal(windows[1].image, spec.frames[stride : stride + 64].T)


def test_slice_windows_short_spectrogram_and_bad_stride():
    spec = compute_spectrogram(
        AudioBuffer(np.zeros(DFT_SIZE + 10 * HOP_SAMPLES), SAMPLE_RATE_HZ)
    )
    assert spec.num_frames < WINDOW_FRAMES
    assert slice_windows(spec, 8) == []
    with pytest.raises(ValueError):
        slice_windows(spec, 0)


def test_spec_dump_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mat = rng.normal(size=(17, 5)).astype(np.float32)
    path = tmp_path / "m.spec"
    write_spec_dump(mat, path)
    np.testing.assert_array_equal(read_spec_dump(path), mat)


def test_spec_dump_errors(tmp_path):
    with pytest.raises(ValueError, match="2-D"):
        write_spec_dump(np.zeros(4), tmp_path / "x.spec")

    bad = tmp_path / "bad.spec"
    bad.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ValueError, match="bad magic"):
        read_spec_dump(bad)

    trunc = tmp_path / "trunc.spec"
    write_spec_dump(np.zeros((4, 4), dtype=np.float32), trunc)
    trunc.write_bytes(trunc.read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_spec_dump(trunc)
