"""Data augmentation: speed perturbation, synthetic reverberation and additive noise.

All transforms are seeded and deterministic. An identity spec returns a
bit-identical copy of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidAugmentSpecError
from .features import AudioBuffer

SPEED_FACTORS = (0.9, 1.0, 1.1)
SNR_RANGE_DB = (0.0, 40.0)
MAX_DECAY_S = 1.0


@dataclass(frozen=True)
class AugmentSpec:
    speed_factor: float = 1.0
    noise_snr_db: float | None = None
    reverb_decay_s: float | None = None
    seed: int = 0

    @property
    def is_identity(self) -> bool:
        return (
            self.speed_factor == 1.0 and self.noise_snr_db is None and self.reverb_decay_s is None
        )

    def validate(self) -> None:
        if self.speed_factor not in SPEED_FACTORS:
            raise InvalidAugmentSpecError(
                f"speed_factor must be one of {SPEED_FACTORS}, got {self.speed_factor}",
                field="speed_factor",
            )
        if self.noise_snr_db is not None and not (
            SNR_RANGE_DB[0] <= self.noise_snr_db <= SNR_RANGE_DB[1]
        ):
            raise InvalidAugmentSpecError(
                f"noise_snr_db must be in {SNR_RANGE_DB}, got {self.noise_snr_db}",
                field="noise_snr_db",
            )
        if self.reverb_decay_s is not None and not 0.0 < self.reverb_decay_s <= MAX_DECAY_S:
            raise InvalidAugmentSpecError(
                f"reverb_decay_s must be in (0, {MAX_DECAY_S}], got {self.reverb_decay_s}",
                field="reverb_decay_s",
            )
        if not 0 <= self.seed < 2**64:
            raise InvalidAugmentSpecError("seed must be an unsigned 64-bit value", field="seed")


def augment(audio: AudioBuffer, spec: AugmentSpec) -> AudioBuffer:
    """Apply speed perturbation, then reverberation, then noise.

    Noise is scaled so that the SNR measured over the whole utterance equals
    ``spec.noise_snr_db``.

    Raises:
        InvalidAugmentSpecError: If the spec is out of range.
    """
    spec.validate()
    samples = audio.samples.copy()
    if spec.is_identity:
        return AudioBuffer(samples, audio.sample_rate)

    rng = np.random.default_rng(spec.seed)
    if spec.speed_factor != 1.0:
        samples = change_speed(samples, spec.speed_factor)
    if spec.reverb_decay_s is not None:
        samples = add_reverb(samples, spec.reverb_decay_s, rng, audio.sample_rate)
    if spec.noise_snr_db is not None:
        samples = samples + noise_at_snr(samples, spec.noise_snr_db, rng)
    return AudioBuffer(samples, audio.sample_rate)


def change_speed(samples: np.ndarray, speed_factor: float) -> np.ndarray:
    """Resample by linear interpolation; duration scales by ``1/speed_factor``."""
    length = len(samples)
    new_length = max(1, int(round(length / speed_factor)))
    positions = np.arange(new_length, dtype=np.float64) * speed_factor
    return np.interp(positions, np.arange(length, dtype=np.float64), samples)


def synthetic_rir(decay_s: float, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    """Exponentially decaying noise tail with a unit direct path.

    The envelope falls by 60 dB over ``decay_s`` seconds.
    """
    length = max(2, int(decay_s * sample_rate))
    t = np.arange(length) / sample_rate
    rir = rng.standard_normal(length) * np.exp(-6.9078 * t / decay_s) * 0.3
    rir[0] = 1.0
    return rir / np.sqrt(np.sum(rir**2))


def add_reverb(
    samples: np.ndarray, decay_s: float, rng: np.random.Generator, sample_rate: int
) -> np.ndarray:
    wet = fftconvolve(samples, synthetic_rir(decay_s, rng, sample_rate))[: len(samples)]
    dry_rms = np.sqrt(np.mean(samples**2))
    wet_rms = np.sqrt(np.mean(wet**2))
    if wet_rms > 0.0:
        wet *= dry_rms / wet_rms
    return wet


def noise_at_snr(samples: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise whose power is ``snr_db`` below the power of ``samples``."""
    noise = rng.standard_normal(len(samples))
    signal_power = float(np.mean(samples**2))
    noise_power = float(np.mean(noise**2))
    if signal_power == 0.0 or noise_power == 0.0:
        return np.zeros_like(samples)
    return noise * np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def random_spec(
    rng: np.random.Generator,
    *,
    snr_range_db: tuple[float, float] = (5.0, 30.0),
    reverb_probability: float = 0.5,
    max_decay_s: float = 0.5,
    allow_speed: bool = True,
) -> AugmentSpec:
    """Draw a training-time augmentation spec."""
    speed = float(rng.choice(SPEED_FACTORS)) if allow_speed else 1.0
    snr = float(rng.uniform(*snr_range_db))
    decay = float(rng.uniform(0.05, max_decay_s)) if rng.random() < reverb_probability else None
    return AugmentSpec(
        speed_factor=speed,
        noise_snr_db=snr,
        reverb_decay_s=decay,
        seed=int(rng.integers(0, 2**63)),
    )
