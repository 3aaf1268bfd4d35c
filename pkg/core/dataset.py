"""Turn utterances into training examples for the different objectives."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .augment import AugmentSpec
from .config import AugmentConfig
from .errors import AlignmentError, EmptyLatticeError, UnknownTranscriptError
from .features import compute_logmel, read_wav
from .graphs import (
    DEFAULT_TOLERANCE,
    AlignmentSpec,
    build_numerator_aligned,
    build_numerator_free,
    output_frames,
    transcript_for,
)
from .manifest import Manifest, resolve_wav
from .synth import SynthUtterance, augment_utterance, senone_of
from .topology import DatasetKind, HmmTopology
from .trainer import Example
from .utils import derive_rng

logger = logging.getLogger(__name__)

ALIGNED_MODES = ("phone-align", "phone-align+transfer", "phone-align+ts")
FREE_MODES = ("e2e", "e2e+transfer")


def features_of(utt: SynthUtterance) -> np.ndarray:
    return compute_logmel(utt.audio).frames


def load_corpus(
    manifest: Manifest, audio_dir: str | Path, kind: DatasetKind
) -> list[SynthUtterance]:
    """Read the audio of every manifest record back into utterances."""
    corpus = []
    for record in manifest.records:
        audio = read_wav(resolve_wav(record, audio_dir))
        corpus.append(
            SynthUtterance(
                uid=record.id,
                audio=audio,
                kind=record.kind,
                alignment=list(record.align or ()),
                speaker_id=record.speaker,
                dataset=kind,
                ww_ends_s=() if record.ww_end_s is None else (record.ww_end_s,),
            )
        )
    return corpus


def augment_policy(kind: DatasetKind, utt: SynthUtterance) -> bool:
    """Snips augments every utterance; Fluency only its positives."""
    return kind is DatasetKind.SNIPS or utt.kind == "pos"


def augmented_copies(
    corpus: Sequence[SynthUtterance],
    kind: DatasetKind,
    seed: int,
    augment: AugmentConfig | None = None,
) -> list[SynthUtterance]:
    """Noisy, reverberant and speed-perturbed copies of the utterances the policy selects."""
    augment = augment or AugmentConfig()
    out = []
    for utt in corpus:
        if not augment_policy(kind, utt):
            continue
        for copy in range(augment.copies):
            spec = augment.draw(derive_rng(seed, "augment", utt.uid, copy))
            out.append(augment_utterance(utt, spec, uid=f"{utt.uid}-aug{copy}"))
    return out


def senone_targets(utt: SynthUtterance, num_input_frames: int, subsample: int = 3) -> np.ndarray:
    """Senone id per output frame from the utterance's 10 ms alignment."""
    labels = np.zeros(num_input_frames, dtype=np.int64)
    for seg in utt.alignment:
        end = min(seg.end, num_input_frames)
        length = seg.end - seg.start
        for frame in range(seg.start, end):
            labels[frame] = senone_of(seg.unit, utt.dataset, frame - seg.start, length)
    return labels[::subsample]


def lfmmi_example(
    utt: SynthUtterance,
    topology: HmmTopology,
    mode: str,
    *,
    tolerance: int = DEFAULT_TOLERANCE,
    features: np.ndarray | None = None,
) -> Example:
    """Build the numerator for one utterance.

    Aligned modes build a frame-expanded lattice; free modes build the
    transcript graph with self-loops.

    Raises:
        AlignmentError, EmptyLatticeError: When the alignment cannot be expanded.
        UnknownTranscriptError: When the utterance is too short for its transcript.
    """
    frames = features_of(utt) if features is None else features
    t_out = output_frames(frames.shape[0])
    if mode in ALIGNED_MODES:
        align = AlignmentSpec.from_segments(utt.alignment, frames.shape[0], uid=utt.uid)
        target = build_numerator_aligned(align, topology, t_out, tolerance=tolerance)
    elif mode in FREE_MODES:
        transcript = transcript_for(topology.kind, utt.kind == "pos")
        target = build_numerator_free(transcript, topology)
        shortest = target.min_path_length()
        if shortest is None or shortest > t_out:
            raise UnknownTranscriptError(
                f"{utt.uid}: {t_out} frames cannot hold {transcript!r}", transcript
            )
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    return Example(utt.uid, frames, target)


def lfmmi_examples(
    corpus: Iterable[SynthUtterance],
    topology: HmmTopology,
    mode: str,
    *,
    tolerance: int = DEFAULT_TOLERANCE,
    workers: int = 1,
) -> list[Example]:
    """Examples for every utterance; unusable ones are skipped with a warning."""

    def build(utt: SynthUtterance) -> Example | None:
        try:
            return lfmmi_example(utt, topology, mode, tolerance=tolerance)
        except (AlignmentError, EmptyLatticeError, UnknownTranscriptError) as e:
            logger.warning("skipping %s: %s", utt.uid, e)
            return None

    items = list(corpus)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(build, items))
    else:
        built = [build(u) for u in items]
    examples = [e for e in built if e is not None]
    logger.info("%s: %d of %d utterances usable", mode, len(examples), len(items))
    return examples


def senone_examples(corpus: Iterable[SynthUtterance], subsample: int = 3) -> list[Example]:
    examples = []
    for utt in corpus:
        frames = features_of(utt)
        examples.append(Example(utt.uid, frames, senone_targets(utt, frames.shape[0], subsample)))
    return examples


def student_view(
    utt: SynthUtterance, seed: int, augment: AugmentConfig | None = None
) -> tuple[SynthUtterance, AugmentSpec]:
    """Noise and reverb but no speed change, so frame counts match the clean audio."""
    rng = derive_rng(seed, "student", utt.uid)
    spec = (augment or AugmentConfig()).draw(rng, allow_speed=False)
    return augment_utterance(utt, spec), spec
