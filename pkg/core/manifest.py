"""Utterance manifests: JSON-lines records, subsets and eval-concat sets."""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, EmptyEvalSetError, FormatError
from .features import AudioBuffer, read_wav, write_wav
from .synth import Segment, SynthUtterance

logger = logging.getLogger(__name__)

SUBSET_SIZES: tuple[int | str, ...] = (100, 500, 1000, 2000, "all")
SPLITS = ("train", "dev", "eval")


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    wav: str
    kind: str  # "pos" | "neg"
    speaker: int
    align: tuple[Segment, ...] | None = None
    ww_end_s: float | None = None

    @property
    def is_positive(self) -> bool:
        return self.kind == "pos"

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "id": self.id,
            "wav": self.wav,
            "kind": self.kind,
            "speaker": self.speaker,
        }
        if self.align is not None:
            data["align"] = [[s.unit, s.start, s.end] for s in self.align]
        if self.ww_end_s is not None:
            data["ww_end_s"] = round(self.ww_end_s, 6)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> UtteranceRecord:
        kind = str(data["kind"])
        if kind not in ("pos", "neg"):
            raise ConfigError(f"Record {data.get('id')!r}: kind must be pos or neg", field="kind")
        align = data.get("align")
        segments = None
        if align is not None:
            segments = tuple(Segment(str(u), int(s), int(e)) for u, s, e in align)
        ww_end = data.get("ww_end_s")
        return cls(
            id=str(data["id"]),
            wav=str(data["wav"]),
            kind=kind,
            speaker=int(data["speaker"]),
            align=segments,
            ww_end_s=None if ww_end is None else float(ww_end),
        )


@dataclass
class Manifest:
    records: list[UtteranceRecord] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise ConfigError(f"Duplicate utterance id {record.id!r}", field="id")
            seen.add(record.id)

    @property
    def positives(self) -> list[UtteranceRecord]:
        return [r for r in self.records if r.is_positive]

    @property
    def negatives(self) -> list[UtteranceRecord]:
        return [r for r in self.records if not r.is_positive]

    def __len__(self) -> int:
        return len(self.records)


def record_for(utt: SynthUtterance, wav: str) -> UtteranceRecord:
    return UtteranceRecord(
        id=utt.uid,
        wav=wav,
        kind=utt.kind,
        speaker=utt.speaker_id,
        align=tuple(utt.alignment),
        ww_end_s=utt.ww_end_s,
    )


# ---------------------------------------------------------------------------
# JSON lines I/O
# ---------------------------------------------------------------------------
def write_manifest(path: str | Path, manifest: Manifest) -> None:
    """Write one JSON object per line, keys in a stable order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for record in manifest.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path, split: str | None = None) -> Manifest:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(UtteranceRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"{path}:{line_no}: invalid manifest record ({e})", path) from e
    return Manifest(records, split or path.stem)


def resolve_wav(record: UtteranceRecord, base_dir: str | Path) -> Path:
    wav = Path(record.wav)
    return wav if wav.is_absolute() else Path(base_dir) / wav


# ---------------------------------------------------------------------------
# Subsets and eval-concat
# ---------------------------------------------------------------------------
def make_subsets(
    manifest: Manifest, sizes: Sequence[int | str] = SUBSET_SIZES
) -> list[Manifest]:
    """Return one manifest per size with the first k positives and all negatives.

    Record order is preserved, so smaller subsets are prefixes of larger ones.

    Raises:
        ConfigError: If a size exceeds the number of positives.
    """
    positives = manifest.positives
    subsets = []
    for size in sizes:
        k = len(positives) if size == "all" else int(size)
        if k > len(positives):
            raise ConfigError(
                f"Subset size {k} exceeds the {len(positives)} positives available", field="n"
            )
        keep = {r.id for r in positives[:k]}
        records = [r for r in manifest.records if not r.is_positive or r.id in keep]
        subsets.append(Manifest(records, manifest.split))
    return subsets


def subset_positives(manifest: Manifest, size: int | str) -> Manifest:
    return make_subsets(manifest, [size])[0]


def make_eval_concat(
    manifest: Manifest, audio_dir: str | Path, subdir: str = "concat"
) -> tuple[Manifest, int]:
    """Append a same-speaker negative to every positive.

    The concatenated audio is written to ``audio_dir/subdir``; wake-word end
    references are unchanged. Positives whose speaker has no negative are
    skipped with a warning.

    Returns:
        The concat manifest and the number of skipped positives.
    """
    if not manifest.positives:
        raise EmptyEvalSetError("Manifest has no positives to concatenate")
    by_speaker: dict[int, list[UtteranceRecord]] = {}
    for record in manifest.negatives:
        by_speaker.setdefault(record.speaker, []).append(record)

    cursor: dict[int, int] = {}
    records = []
    skipped = 0
    for positive in manifest.positives:
        candidates = by_speaker.get(positive.speaker)
        if not candidates:
            skipped += 1
            continue
        index = cursor.get(positive.speaker, 0)
        negative = candidates[index % len(candidates)]
        cursor[positive.speaker] = index + 1
        joined = concat_audio(
            [read_wav(resolve_wav(positive, audio_dir)), read_wav(resolve_wav(negative, audio_dir))]
        )
        wav_name = f"{subdir}/{positive.id}+{negative.id}.wav"
        write_wav(Path(audio_dir) / wav_name, joined)
        records.append(
            UtteranceRecord(
                id=f"{positive.id}+{negative.id}",
                wav=wav_name,
                kind="pos",
                speaker=positive.speaker,
                align=None,
                ww_end_s=positive.ww_end_s,
            )
        )
    if skipped:
        logger.warning("eval-concat: skipped %d positives whose speaker has no negative", skipped)
    return Manifest(records + manifest.negatives, manifest.split), skipped


def concat_audio(parts: Iterable[AudioBuffer]) -> AudioBuffer:
    return AudioBuffer(np.concatenate([p.samples for p in parts]))
