"""Tests for data augmentation (REQ-FUNC-AUD-006..008)."""

import numpy as np
import pytest

from core.augment import AugmentSpec, augment, change_speed, noise_at_snr, random_spec
from core.config import AugmentConfig
from core.errors import InvalidAugmentSpecError
from core.features import AudioBuffer, compute_logmel


@pytest.fixture
def speechy():
    rng = np.random.default_rng(5)
    t = np.arange(16000) / 16000
    return AudioBuffer(0.3 * np.sin(2 * np.pi * 300 * t) + 0.05 * rng.standard_normal(16000))


def test_identity_spec_is_bit_exact(speechy):
    """REQ-FUNC-AUD-006: Identity augmentation returns an equal copy."""
    out = augment(speechy, AugmentSpec())
    np.testing.assert_array_equal(out.samples, speechy.samples)
    assert out.samples is not speechy.samples


@pytest.mark.parametrize("speed, expected", [(0.9, 17778), (1.1, 14545)])
def test_speed_rescales_length(speechy, speed, expected):
    """REQ-FUNC-AUD-007: Speed s changes 16000 samples to about 16000 / s."""
    out = augment(speechy, AugmentSpec(speed_factor=speed))
    assert abs(len(out) - expected) <= 2


def test_speed_keeps_frame_count_within_one(speechy):
    """REQ-FUNC-AUD-007: Frame counts scale by 1/s within one frame."""
    base = compute_logmel(speechy).num_frames
    for speed in (0.9, 1.1):
        frames = compute_logmel(AudioBuffer(change_speed(speechy.samples, speed))).num_frames
        assert abs(frames - round(base / speed)) <= 1


def test_noise_mixed_at_requested_snr(speechy):
    """REQ-FUNC-AUD-007: 20 dB noise measures within half a decibel of 20 dB."""
    out = augment(speechy, AugmentSpec(noise_snr_db=20.0, seed=9))
    noise = out.samples - speechy.samples
    snr = 10 * np.log10(np.mean(speechy.samples**2) / np.mean(noise**2))
    assert 19.5 <= snr <= 20.5


def test_noise_on_silence_is_silent():
    assert not np.any(noise_at_snr(np.zeros(100), 10.0, np.random.default_rng(0)))


def test_augment_is_deterministic(speechy):
    spec = AugmentSpec(speed_factor=1.1, noise_snr_db=10.0, reverb_decay_s=0.3, seed=42)
    np.testing.assert_array_equal(augment(speechy, spec).samples, augment(speechy, spec).samples)


@pytest.mark.parametrize(
    "spec, field",
    [
        (AugmentSpec(speed_factor=1.2), "speed_factor"),
        (AugmentSpec(noise_snr_db=45.0), "noise_snr_db"),
        (AugmentSpec(reverb_decay_s=0.0), "reverb_decay_s"),
        (AugmentSpec(reverb_decay_s=1.5), "reverb_decay_s"),
    ],
)
def test_invalid_spec_rejected(speechy, spec, field):
    """REQ-FUNC-AUD-008: Out-of-range fields are named in the error."""
    with pytest.raises(InvalidAugmentSpecError) as excinfo:
        augment(speechy, spec)
    assert excinfo.value.field == field


def test_random_spec_respects_config():
    config = AugmentConfig(snr_range_db=(10.0, 12.0), reverb_probability=0.0, speed=True)
    rng = np.random.default_rng(1)
    for _ in range(20):
        spec = config.draw(rng, allow_speed=False)
        spec.validate()
        assert spec.speed_factor == 1.0
        assert 10.0 <= spec.noise_snr_db <= 12.0
        assert spec.reverb_decay_s is None
    speeds = {random_spec(rng).speed_factor for _ in range(50)}
    assert speeds == {0.9, 1.0, 1.1}
