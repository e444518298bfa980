"""WAV ingestion and log-spectrogram windowing into classifier input images.

The framing is fixed so that a 1024-point DFT at 16 kHz gives a bin spacing
of 15.625 Hz, and the 256 bins below 4000 Hz form the frequency axis of the
256x64 window images. One spectrogram frame is emitted every 80 samples
(5 ms); a window covers 64 consecutive frames (0.32 s).
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE_HZ = 16000
DFT_SIZE = 1024
HOP_SAMPLES = 80
HOP_S = HOP_SAMPLES / SAMPLE_RATE_HZ
FREQ_BINS = 256
BIN_HZ = SAMPLE_RATE_HZ / DFT_SIZE
WINDOW_FRAMES = 64
WINDOW_EXTENT_S = WINDOW_FRAMES * HOP_S
LOG_EPS = 1e-6

SPEC_MAGIC = b"SPEC"

_HANN = np.hanning(DFT_SIZE)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono audio with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional (mono)")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if samples.size and not np.isfinite(samples).all():
            raise ValueError("samples must be finite")
        if samples.size and np.abs(samples).max() > 1.0 + 1e-9:
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __eq__(self, other) -> bool:
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(
            self.samples, other.samples
        )


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Log-magnitude time-frequency matrix, one row per 5 ms frame.

    ``frames[t, k]`` is ``log(|DFT| + eps)`` at frequency ``k * 15.625`` Hz;
    ``origin_time_s`` is the center time of the first frame.
    """

    frames: np.ndarray
    origin_time_s: float
    hop_s: float = HOP_S
    freq_lo_hz: float = 0.0
    freq_hi_hz: float = 4000.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2 or frames.shape[1] != FREQ_BINS:
            raise ValueError(f"frames must be T x {FREQ_BINS}, got {frames.shape}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def frame_times(self) -> np.ndarray:
        return self.origin_time_s + np.arange(self.num_frames) * self.hop_s


@dataclass(frozen=True, eq=False)
class SpecWindow:
    """A 256x64 (frequency x time) spectrogram slice centered at ``center_time_s``."""

    image: np.ndarray
    center_time_s: float

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        if image.shape != (FREQ_BINS, WINDOW_FRAMES):
            raise ValueError(
                f"window image must be {FREQ_BINS}x{WINDOW_FRAMES}, got {image.shape}"
            )
        object.__setattr__(self, "image", image)


def load_wav(path: str | Path) -> AudioBuffer:
    """Load a mono 16-bit PCM WAV file, normalizing samples by 1/32768.

    Multi-channel files are rejected outright; silently downmixing would
    change energy statistics in ways the caller cannot see.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wav:
            n_channels = wav.getnchannels()
            sample_width = wav.getsampwidth()
            rate = wav.getframerate()
            raw = wav.readframes(wav.getnframes())
    except wave.Error as exc:
        raise ValueError(f"{path}: not a PCM WAV file ({exc})") from exc
    if n_channels != 1:
        raise ValueError(
            f"{path}: expected mono audio, got {n_channels} channels "
            "(downmix explicitly before loading)"
        )
    if sample_width != 2:
        raise ValueError(f"{path}: expected 16-bit PCM, got {8 * sample_width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def save_wav(audio: AudioBuffer, path: str | Path) -> None:
    """Write a buffer as mono 16-bit PCM WAV."""
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(audio.sample_rate_hz)
        wav.writeframes(pcm.tobytes())


def resample_linear(audio: AudioBuffer, target_rate_hz: int = SAMPLE_RATE_HZ) -> AudioBuffer:
    """Resample by linear interpolation. Off the default path; opt in explicitly."""
    if audio.sample_rate_hz == target_rate_hz:
        return audio
    n_out = int(round(audio.samples.size * target_rate_hz / audio.sample_rate_hz))
    t_in = np.arange(audio.samples.size) / audio.sample_rate_hz
    t_out = np.arange(n_out) / target_rate_hz
    return AudioBuffer(np.interp(t_out, t_in, audio.samples), target_rate_hz)


def compute_spectrogram(audio: AudioBuffer, resample: bool = False) -> Spectrogram:
    """Compute the log-magnitude spectrogram on the canonical 16 kHz framing.

    Frame ``k`` covers samples ``[k*80, k*80 + 1024)`` (left-aligned, Hann
    windowed, trailing remainder dropped); magnitudes pass through
    ``log(m + 1e-6)`` so silence maps to a finite floor.
    """
    if audio.sample_rate_hz != SAMPLE_RATE_HZ:
        if not resample:
            raise ValueError(
                f"expected {SAMPLE_RATE_HZ} Hz audio, got {audio.sample_rate_hz} Hz "
                "(pass resample=True to interpolate)"
            )
        audio = resample_linear(audio, SAMPLE_RATE_HZ)
    n = audio.samples.size
    if n < DFT_SIZE:
        raise ValueError(
            f"audio too short for one analysis window: {n} < {DFT_SIZE} samples"
        )
    num_frames = (n - DFT_SIZE) // HOP_SAMPLES + 1
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, DFT_SIZE)
    frames = frames[:: HOP_SAMPLES][:num_frames]
    spectrum = np.fft.rfft(frames * _HANN, axis=1)
    mags = np.abs(spectrum[:, :FREQ_BINS])
    logmag = np.log(mags + LOG_EPS).astype(np.float32)
    origin = (DFT_SIZE / 2) / SAMPLE_RATE_HZ
    return Spectrogram(logmag, origin_time_s=origin)


def slice_windows(spec: Spectrogram, stride_frames: int) -> list[SpecWindow]:
    """Cut the spectrogram into 64-frame windows starting every ``stride_frames``.

    A spectrogram with fewer than 64 frames yields no windows.
    """
    if stride_frames < 1:
        raise ValueError(f"stride_frames must be >= 1, got {stride_frames}")
    t = spec.num_frames
    if t < WINDOW_FRAMES:
        return []
    windows = []
    for start in range(0, t - WINDOW_FRAMES + 1, stride_frames):
        image = spec.frames[start : start + WINDOW_FRAMES].T.copy()
        center = spec.origin_time_s + (start + (WINDOW_FRAMES - 1) / 2) * spec.hop_s
        windows.append(SpecWindow(image, center))
    return windows


def write_spec_dump(matrix: np.ndarray, path: str | Path) -> None:
    """Dump a 2-D float matrix as the debug binary format.

    Layout: magic ``SPEC``, u32 rows, u32 cols, u32 reserved, then row-major
    little-endian float32 values.
    """
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError("dump expects a 2-D matrix")
    rows, cols = matrix.shape
    header = SPEC_MAGIC + struct.pack("<III", rows, cols, 0)
    Path(path).write_bytes(header + matrix.tobytes(order="C"))


def read_spec_dump(path: str | Path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != SPEC_MAGIC:
        raise ValueError(f"{path}: not a spectrogram dump (bad magic)")
    rows, cols, _ = struct.unpack("<III", blob[4:16])
    expected = 16 + 4 * rows * cols
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated dump, expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16)
    return data.reshape(rows, cols).copy()
