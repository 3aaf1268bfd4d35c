"""Synthetic corpus generator with exact frame alignments.

Speech is rendered from a small inventory of "phones", each a band-limited
complex of three partials. A speaker shifts every partial by a small pitch
factor. The wake word is a fixed phone sequence with one phone per wake-word
HMM state; general speech draws phones at random from the whole inventory,
so the wake word is only recognisable from its phone order.

Alignment unit ids:
    ``sil``      silence
    ``ww<k>``    k-th wake-word phone (one per wake-word HMM state)
    ``ph<p>``    general-speech phone ``p``
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .augment import AugmentSpec, augment
from .features import HOP_SAMPLES, SAMPLE_RATE, WINDOW_SAMPLES, AudioBuffer, num_frames_for
from .topology import DatasetKind
from .utils import derive_rng

logger = logging.getLogger(__name__)

NUM_PHONES = 21
SILENCE_UNIT = "sil"
SENONES_PER_PHONE = 3
NUM_SENONES = 1 + NUM_PHONES * SENONES_PER_PHONE  # 64

# Phones used by each wake word, in order.
WAKE_WORD_PHONES = {
    DatasetKind.SNIPS: (3, 11, 6, 16),
    DatasetKind.FLUENCY: (1, 14, 8, 19, 5),
}

_NOISE_FLOOR = 0.003
_RAMP_S = 0.005


class Segment(NamedTuple):
    unit: str
    start: int
    end: int


@dataclass
class SynthUtterance:
    uid: str
    audio: AudioBuffer
    kind: str  # "pos" or "neg"
    alignment: list[Segment]
    speaker_id: int
    dataset: DatasetKind
    ww_ends_s: tuple[float, ...] = ()

    @property
    def num_frames(self) -> int:
        return num_frames_for(len(self.audio))

    @property
    def ww_end_s(self) -> float | None:
        return self.ww_ends_s[0] if self.ww_ends_s else None


@dataclass(frozen=True)
class CorpusSpec:
    kind: DatasetKind
    num_positive: int = 0
    negative_hours: float = 0.0
    num_negative: int | None = None
    seed: int = 0
    num_speakers: int = 20
    speaker_offset: int = 0
    negative_duration_s: tuple[float, float] = (1.5, 4.0)
    pauses: bool | None = None
    prefix: str = "utt"

    @property
    def negatives_have_pauses(self) -> bool:
        return self.kind is DatasetKind.FLUENCY if self.pauses is None else self.pauses


@dataclass(frozen=True)
class _Phone:
    partials: tuple[float, ...]
    weights: tuple[float, ...] = field(default=(1.0, 0.6, 0.35))


def _phone_table() -> tuple[_Phone, ...]:
    base = [250.0 * (7000.0 / 250.0) ** (p / (NUM_PHONES - 1)) for p in range(NUM_PHONES)]
    table = []
    for p in range(NUM_PHONES):
        f1 = base[p]
        f2 = base[(p * 8 + 5) % NUM_PHONES]
        f3 = min(f1 * 2.0, 7400.0)
        table.append(_Phone((f1, f2, f3)))
    return tuple(table)


PHONES = _phone_table()


def speaker_pitch(speaker_id: int) -> float:
    """Pitch factor of a speaker, within +-4 %."""
    return 1.0 + 0.04 * (((speaker_id * 37) % 11) - 5) / 5.0


def speaker_gain(speaker_id: int) -> float:
    return 0.22 + 0.08 * (((speaker_id * 13) % 7) / 6.0)


def senone_of(unit: str, dataset: DatasetKind, position: int, length: int) -> int:
    """Senone label for a frame ``position`` frames into a segment of ``length`` frames."""
    if unit == SILENCE_UNIT:
        return 0
    if unit.startswith("ww"):
        phone = WAKE_WORD_PHONES[dataset][int(unit[2:])]
    else:
        phone = int(unit[2:])
    third = min(SENONES_PER_PHONE - 1, (SENONES_PER_PHONE * position) // max(length, 1))
    return 1 + phone * SENONES_PER_PHONE + third


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------
def synth_corpus(spec: CorpusSpec) -> list[SynthUtterance]:
    """Generate a deterministic corpus: positives first, then negatives."""
    return list(iter_corpus(spec))


def iter_corpus(spec: CorpusSpec) -> Iterator[SynthUtterance]:
    """Lazily generate the utterances of :func:`synth_corpus`."""
    if spec.num_positive < 0 or spec.negative_hours < 0:
        raise ValueError("Corpus sizes must be non-negative")
    for index in range(spec.num_positive):
        rng = derive_rng(spec.seed, "pos", index)
        speaker = spec.speaker_offset + int(rng.integers(spec.num_speakers))
        plan = _positive_plan(spec.kind, rng)
        yield _render(f"{spec.prefix}-pos-{index:05d}", "pos", plan, speaker, spec.kind, rng)

    budget = spec.negative_hours * 3600.0
    produced = 0.0
    index = 0
    while True:
        if spec.num_negative is not None:
            if index >= spec.num_negative:
                break
        elif produced >= budget:
            break
        rng = derive_rng(spec.seed, "neg", index)
        speaker = spec.speaker_offset + int(rng.integers(spec.num_speakers))
        duration = float(rng.uniform(*spec.negative_duration_s))
        plan = _negative_plan(duration, spec.negatives_have_pauses, rng)
        utt = _render(f"{spec.prefix}-neg-{index:05d}", "neg", plan, speaker, spec.kind, rng)
        produced += utt.audio.duration_s
        index += 1
        yield utt


def synth_stream(
    kind: DatasetKind,
    ww_end_times_s: Sequence[float],
    duration_s: float,
    *,
    seed: int = 0,
    speaker_id: int = 0,
    uid: str = "stream",
) -> SynthUtterance:
    """A continuous stream of speech and silence with wake words ending at given times.

    Each wake word is preceded by 0.2 s of silence and followed by 0.4 s of
    silence; the rest of the stream is filled with general speech runs.
    """
    rng = derive_rng(seed, "stream", uid)
    plan: list[tuple[str, int]] = []
    cursor = 0
    for end_s in sorted(ww_end_times_s):
        ww_plan = _wake_word_plan(kind, rng)
        ww_len = sum(n for _, n in ww_plan)
        lead = int(0.2 * SAMPLE_RATE)
        start = int(round(end_s * SAMPLE_RATE)) - ww_len - lead
        if start < cursor:
            raise ValueError(f"Wake word ending at {end_s:.2f}s does not fit in the stream")
        plan.extend(_filler_plan(start - cursor, rng))
        plan.append((SILENCE_UNIT, lead))
        plan.extend(ww_plan)
        cursor = start + lead + ww_len
        trail = int(0.4 * SAMPLE_RATE)
        plan.append((SILENCE_UNIT, trail))
        cursor += trail
    total = int(round(duration_s * SAMPLE_RATE))
    plan.extend(_filler_plan(total - cursor, rng))
    return _render(uid, "pos" if ww_end_times_s else "neg", plan, speaker_id, kind, rng)


def augment_utterance(
    utt: SynthUtterance, spec: AugmentSpec, uid: str | None = None
) -> SynthUtterance:
    """Augment an utterance and rescale its alignment to the new duration."""
    audio = augment(utt.audio, spec)
    frames = num_frames_for(len(audio))
    return SynthUtterance(
        uid=uid or utt.uid,
        audio=audio,
        kind=utt.kind,
        alignment=rescale_alignment(utt.alignment, spec.speed_factor, frames),
        speaker_id=utt.speaker_id,
        dataset=utt.dataset,
        ww_ends_s=tuple(t / spec.speed_factor for t in utt.ww_ends_s),
    )


def rescale_alignment(
    segments: Sequence[Segment], speed_factor: float, num_frames: int
) -> list[Segment]:
    """Stretch segment boundaries by ``1/speed_factor`` and re-tile ``[0, num_frames)``."""
    if not segments:
        return []
    bounds = [0]
    for seg in segments[:-1]:
        bounds.append(min(num_frames, int(round(seg.end / speed_factor))))
    bounds.append(num_frames)
    out: list[Segment] = []
    for seg, start, end in zip(segments, bounds[:-1], bounds[1:], strict=True):
        start = max(start, out[-1].end if out else 0)
        if end > start:
            out.append(Segment(seg.unit, start, end))
    if out and out[-1].end != num_frames:
        out[-1] = Segment(out[-1].unit, out[-1].start, num_frames)
    return out


# ---------------------------------------------------------------------------
# Internals
# ---------------------------------------------------------------------------
def _seconds(rng: np.random.Generator, low: float, high: float) -> int:
    return int(round(rng.uniform(low, high) * SAMPLE_RATE))


def _wake_word_plan(kind: DatasetKind, rng: np.random.Generator) -> list[tuple[str, int]]:
    return [(f"ww{k}", _seconds(rng, 0.10, 0.20)) for k in range(len(WAKE_WORD_PHONES[kind]))]


def _speech_run(samples: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    plan: list[tuple[str, int]] = []
    left = samples
    while left > 0:
        length = min(left, _seconds(rng, 0.06, 0.18))
        if left - length < int(0.06 * SAMPLE_RATE):
            length = left
        plan.append((f"ph{int(rng.integers(NUM_PHONES))}", length))
        left -= length
    return plan


def _positive_plan(kind: DatasetKind, rng: np.random.Generator) -> list[tuple[str, int]]:
    plan = [(SILENCE_UNIT, _seconds(rng, 0.2, 0.5))]
    plan.extend(_wake_word_plan(kind, rng))
    if kind.has_request:
        plan.extend(_speech_run(_seconds(rng, 0.8, 2.0), rng))
    plan.append((SILENCE_UNIT, _seconds(rng, 0.3, 0.6)))
    return plan


def _negative_plan(
    duration_s: float, pauses: bool, rng: np.random.Generator
) -> list[tuple[str, int]]:
    lead = _seconds(rng, 0.2, 0.5)
    trail = _seconds(rng, 0.3, 0.6)
    speech = max(int(0.5 * SAMPLE_RATE), int(duration_s * SAMPLE_RATE) - lead - trail)
    plan = [(SILENCE_UNIT, lead)]
    if pauses:
        plan.extend(_filler_plan(speech, rng))
    else:
        plan.extend(_speech_run(speech, rng))
    plan.append((SILENCE_UNIT, trail))
    return plan


def _filler_plan(samples: int, rng: np.random.Generator) -> list[tuple[str, int]]:
    """Alternate speech runs (>= 0.4 s) and pauses (0.15-0.4 s) over ``samples``."""
    min_run = int(0.4 * SAMPLE_RATE)
    if samples <= 0:
        return []
    if samples < min_run:
        return [(SILENCE_UNIT, samples)]
    plan: list[tuple[str, int]] = []
    left = samples
    while left > 0:
        run = min(left, _seconds(rng, 0.4, 2.5))
        if left - run < min_run:
            run = left
        plan.extend(_speech_run(run, rng))
        left -= run
        if left <= 0:
            break
        pause = _seconds(rng, 0.15, 0.4)
        if left - pause < min_run:
            plan.append((SILENCE_UNIT, left))
            break
        plan.append((SILENCE_UNIT, pause))
        left -= pause
    return plan


def _render(
    uid: str,
    kind: str,
    plan: list[tuple[str, int]],
    speaker: int,
    dataset: DatasetKind,
    rng: np.random.Generator,
) -> SynthUtterance:
    plan = [(unit, n) for unit, n in plan if n > 0]
    total = sum(n for _, n in plan)
    samples = rng.standard_normal(total) * _NOISE_FLOOR
    pitch = speaker_pitch(speaker)
    gain = speaker_gain(speaker)
    bounds = [0]
    cursor = 0
    ww_ends: list[float] = []
    last_ww = f"ww{len(WAKE_WORD_PHONES[dataset]) - 1}"
    for unit, n in plan:
        if unit != SILENCE_UNIT:
            phone = _phone_index(unit, dataset)
            amplitude = gain * float(rng.uniform(0.8, 1.2))
            samples[cursor : cursor + n] += amplitude * _tone(PHONES[phone], pitch, n, rng)
        cursor += n
        bounds.append(cursor)
        if unit == last_ww:
            ww_ends.append(cursor / SAMPLE_RATE)

    num_frames = num_frames_for(total)
    frame_bounds = [_frame_boundary(b, num_frames) for b in bounds]
    frame_bounds[-1] = num_frames
    alignment: list[Segment] = []
    for (unit, _), start, end in zip(plan, frame_bounds[:-1], frame_bounds[1:], strict=True):
        if end <= start:
            continue
        if alignment and alignment[-1].unit == unit == SILENCE_UNIT:
            alignment[-1] = Segment(unit, alignment[-1].start, end)
        else:
            alignment.append(Segment(unit, start, end))
    return SynthUtterance(
        uid=uid,
        audio=AudioBuffer(np.clip(samples, -1.0, 1.0)),
        kind=kind,
        alignment=alignment,
        speaker_id=speaker,
        dataset=dataset,
        ww_ends_s=tuple(ww_ends),
    )


def _phone_index(unit: str, dataset: DatasetKind) -> int:
    if unit.startswith("ww"):
        return WAKE_WORD_PHONES[dataset][int(unit[2:])]
    return int(unit[2:])


def _frame_boundary(sample: int, num_frames: int) -> int:
    """First frame whose window centre lies at or after ``sample``."""
    centre_offset = WINDOW_SAMPLES // 2
    frame = math.ceil((sample - centre_offset) / HOP_SAMPLES)
    return min(max(frame, 0), num_frames)


def _tone(phone: _Phone, pitch: float, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    wave = np.zeros(n)
    for freq, weight in zip(phone.partials, phone.weights, strict=True):
        phase = rng.uniform(0.0, 2.0 * math.pi)
        wave += weight * np.sin(2.0 * math.pi * min(freq * pitch, 7500.0) * t + phase)
    ramp = min(int(_RAMP_S * SAMPLE_RATE), n // 2)
    if ramp > 0:
        envelope = np.ones(n)
        edge = 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, ramp))
        envelope[:ramp] = edge
        envelope[-ramp:] = edge[::-1]
        wave *= envelope
    return wave / sum(phone.weights)
