"""Tests for the log-Mel front end and feature archives (REQ-FUNC-AUD-001..005)."""

import numpy as np
import pytest
from scipy.signal import get_window

from core.errors import AudioTooShortError, FormatError, NonFiniteError
from core.features import (
    FEATURE_MAGIC,
    HOP_SAMPLES,
    LOG_FLOOR,
    N_FFT,
    NUM_MEL,
    SAMPLE_RATE,
    WINDOW_SAMPLES,
    AudioBuffer,
    FeatureMatrix,
    _mel_bank,
    compute_logmel,
    num_frames_for,
    read_feature_archive,
    read_wav,
    write_feature_archive,
    write_wav,
)


def _tone(freq_hz: float, seconds: float, amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq_hz * t))


def test_one_second_gives_98_frames():
    """REQ-FUNC-AUD-001: 16000 samples give 98 frames of 64 bins."""
    feats = compute_logmel(AudioBuffer(np.zeros(16000)))
    assert feats.frames.shape == (98, NUM_MEL)
    assert num_frames_for(16000) == 98


def test_frame_count_formula_over_random_lengths():
    """REQ-FUNC-AUD-001: T = 1 + floor((N - 368) / 160) for any N >= 368."""
    rng = np.random.default_rng(3)
    for n in [368, 369, 527, 528, *rng.integers(368, 40000, size=25)]:
        feats = compute_logmel(AudioBuffer(rng.uniform(-0.1, 0.1, int(n))))
        # independent count: number of window starts 0, 160, ... that fit
        starts = range(0, int(n) - WINDOW_SAMPLES + 1, HOP_SAMPLES)
        assert feats.num_frames == len(starts)


def test_short_and_non_finite_audio_rejected():
    """REQ-FUNC-AUD-002: Too-short or non-finite audio raises a descriptive error."""
    with pytest.raises(AudioTooShortError) as excinfo:
        compute_logmel(AudioBuffer(np.zeros(WINDOW_SAMPLES - 1)))
    assert excinfo.value.num_samples == WINDOW_SAMPLES - 1

    samples = np.zeros(2000)
    samples[100] = np.nan
    with pytest.raises(NonFiniteError):
        compute_logmel(AudioBuffer(samples))


def test_silence_hits_log_floor():
    """REQ-FUNC-AUD-003: All-zero audio gives log(1e-10) everywhere."""
    feats = compute_logmel(AudioBuffer(np.zeros(4000)))
    np.testing.assert_allclose(feats.frames, np.log(LOG_FLOOR))


def test_dither_is_seeded():
    audio = AudioBuffer(np.zeros(4000))
    a = compute_logmel(audio, dither=1e-5, seed=11).frames
    b = compute_logmel(audio, dither=1e-5, seed=11).frames
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, np.log(LOG_FLOOR))


def test_tone_peaks_in_one_mel_bin():
    """REQ-FUNC-AUD-004: A 1 kHz tone peaks in the same bin as a direct DFT oracle."""
    audio = _tone(1000.0, 0.5)
    feats = compute_logmel(audio).frames
    interior = feats[2:-2]
    peaks = np.argmax(interior, axis=1)
    assert np.all(peaks == peaks[0])

    # explicit DFT of one frame, independent of np.fft
    frame = audio.samples[5 * HOP_SAMPLES: 5 * HOP_SAMPLES + WINDOW_SAMPLES]
    frame = frame * get_window("hamming", WINDOW_SAMPLES, fftbins=False)
    k = np.arange(N_FFT // 2 + 1)[:, None]
    n = np.arange(WINDOW_SAMPLES)[None, :]
    dft = frame @ np.exp(-2j * np.pi * k * n / N_FFT).T
    energies = (np.abs(dft) ** 2) @ _mel_bank().filters.T
    assert int(np.argmax(energies)) == peaks[0]
    np.testing.assert_allclose(np.log(np.maximum(energies, LOG_FLOOR)), feats[5], atol=1e-8)


def test_feature_archive_round_trip(tmp_path):
    """REQ-FUNC-AUD-005: WFFEAT01 archives keep shape and float32 values."""
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(17, NUM_MEL)).astype(np.float32).astype(np.float64)
    path = tmp_path / "utt.feats"
    write_feature_archive(path, FeatureMatrix(frames))
    assert path.read_bytes()[:8] == FEATURE_MAGIC
    np.testing.assert_array_equal(read_feature_archive(path).frames, frames)


def test_feature_archive_bad_magic(tmp_path):
    """REQ-FUNC-AUD-005: A file without the magic is reported as a format error."""
    path = tmp_path / "bad.feats"
    path.write_bytes(b"NOTFEATS" + bytes(16))
    with pytest.raises(FormatError) as excinfo:
        read_feature_archive(path)
    assert excinfo.value.path == str(path)


def test_wav_round_trip(tmp_path):
    """REQ-FUNC-AUD-005: 16-bit PCM WAV files round-trip within quantization."""
    audio = _tone(440.0, 0.25, amplitude=0.3)
    path = tmp_path / "a" / "tone.wav"
    write_wav(path, audio)
    back = read_wav(path)
    assert back.sample_rate == SAMPLE_RATE
    assert len(back) == len(audio)
    np.testing.assert_allclose(back.samples, audio.samples, atol=1.0 / 32768 + 1e-9)
