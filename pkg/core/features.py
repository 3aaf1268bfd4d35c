"""Audio I/O and log-Mel feature extraction.

Features are 64 log-Mel energies computed over 23 ms Hamming windows
(368 samples at 16 kHz) every 10 ms (160 samples), with triangular filters
spanning 20-7600 Hz. No cepstral mean normalization is applied.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import librosa
import numpy as np
import soundfile as sf
from scipy.signal import get_window

from .errors import AudioTooShortError, FormatError, NonFiniteError, ShapeMismatchError

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 368
HOP_SAMPLES = 160
N_FFT = 512
NUM_MEL = 64
FMIN_HZ = 20.0
FMAX_HZ = 7600.0
LOG_FLOOR = 1e-10
DITHER_AMPLITUDE = 1e-5
FRAME_SHIFT_S = HOP_SAMPLES / SAMPLE_RATE

FEATURE_MAGIC = b"WFFEAT01"
BOTTLENECK_MAGIC = b"WFBNCK01"


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_shift_ms: int = 10
    window_ms: int = 23

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != NUM_MEL:
            raise ShapeMismatchError(
                f"Feature matrix must be T x {NUM_MEL}, got {self.frames.shape}",
                expected=NUM_MEL,
                actual=self.frames.shape,
            )

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class _MelBank:
    window: np.ndarray = field(
        default_factory=lambda: get_window("hamming", WINDOW_SAMPLES, fftbins=False)
    )
    filters: np.ndarray = field(
        default_factory=lambda: librosa.filters.mel(
            sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=NUM_MEL, fmin=FMIN_HZ, fmax=FMAX_HZ
        )
    )


_BANK: _MelBank | None = None


def _mel_bank() -> _MelBank:
    global _BANK
    if _BANK is None:
        _BANK = _MelBank()
    return _BANK


def num_frames_for(num_samples: int) -> int:
    """Frame count for ``num_samples`` of 16 kHz audio (0 when shorter than a window)."""
    if num_samples < WINDOW_SAMPLES:
        return 0
    return 1 + (num_samples - WINDOW_SAMPLES) // HOP_SAMPLES


def compute_logmel(
    audio: AudioBuffer, *, dither: float = 0.0, seed: int = 0
) -> FeatureMatrix:
    """Compute T x 64 log-Mel energies.

    Args:
        audio: 16 kHz mono audio with at least one full window.
        dither: Amplitude of seeded uniform dither (0 disables it).
        seed: Seed for the dither noise.

    Raises:
        AudioTooShortError: If fewer than 368 samples are given.
        NonFiniteError: If any sample is NaN or infinite.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise ShapeMismatchError(
            f"Expected {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz",
            expected=SAMPLE_RATE,
            actual=audio.sample_rate,
        )
    samples = audio.samples
    if len(samples) < WINDOW_SAMPLES:
        raise AudioTooShortError(
            f"Need at least {WINDOW_SAMPLES} samples, got {len(samples)}", len(samples)
        )
    if not np.all(np.isfinite(samples)):
        raise NonFiniteError("Audio contains non-finite samples", what="audio")
    if dither > 0.0:
        rng = np.random.default_rng(seed)
        samples = samples + rng.uniform(-dither, dither, size=samples.shape)

    bank = _mel_bank()
    frames = np.lib.stride_tricks.sliding_window_view(samples, WINDOW_SAMPLES)[::HOP_SAMPLES]
    spectrum = np.fft.rfft(frames * bank.window, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = power @ bank.filters.T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)))


# ---------------------------------------------------------------------------
# WAV files
# ---------------------------------------------------------------------------
def read_wav(path: str | Path) -> AudioBuffer:
    """Read a mono 16 kHz WAV file into an :class:`AudioBuffer`."""
    data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    if rate != SAMPLE_RATE:
        raise ShapeMismatchError(
            f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz", expected=SAMPLE_RATE, actual=rate
        )
    if data.shape[1] != 1:
        raise ShapeMismatchError(
            f"{path}: expected mono audio, got {data.shape[1]} channels",
            expected=1,
            actual=data.shape[1],
        )
    return AudioBuffer(data[:, 0], rate)


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    """Write audio as 16-bit PCM mono WAV."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(audio.samples, -1.0, 1.0)
    sf.write(str(path), clipped, audio.sample_rate, subtype="PCM_16", format="WAV")


# ---------------------------------------------------------------------------
# Binary matrix archives
# ---------------------------------------------------------------------------
def write_matrix(path: str | Path, magic: bytes, matrix: np.ndarray) -> None:
    """Write ``magic`` + u32 rows + u32 cols + row-major little-endian float32 data."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ShapeMismatchError("Archive payload must be a matrix", expected=2, actual=matrix.ndim)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(path: str | Path, magic: bytes, cols: int | None = None) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix` (returned as float64)."""
    blob = Path(path).read_bytes()
    header = len(magic) + 8
    if len(blob) < header or blob[: len(magic)] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}", path, magic)
    rows, width = struct.unpack("<II", blob[len(magic) : header])
    if cols is not None and width != cols:
        raise FormatError(f"{path}: expected {cols} columns, found {width}", path, magic)
    payload = blob[header:]
    if len(payload) != rows * width * 4:
        raise FormatError(f"{path}: truncated archive", path, magic)
    return np.frombuffer(payload, dtype="<f4").reshape(rows, width).astype(np.float64)


def write_feature_archive(path: str | Path, features: FeatureMatrix) -> None:
    write_matrix(path, FEATURE_MAGIC, features.frames)


def read_feature_archive(path: str | Path) -> FeatureMatrix:
    return FeatureMatrix(read_matrix(path, FEATURE_MAGIC, NUM_MEL))
