"""Tests for manifests, subsets and eval-concat sets (REQ-FUNC-AUD-010)."""

import numpy as np
import pytest

from core.errors import ConfigError, EmptyEvalSetError, FormatError
from core.features import AudioBuffer, read_wav, write_wav
from core.manifest import (
    Manifest,
    UtteranceRecord,
    make_eval_concat,
    make_subsets,
    read_manifest,
    record_for,
    resolve_wav,
    subset_positives,
    write_manifest,
)
from core.synth import CorpusSpec, Segment, synth_corpus
from core.topology import DatasetKind


def _records(num_pos=4, num_neg=3):
    records = [
        UtteranceRecord(f"pos{i}", f"pos{i}.wav", "pos", i % 2,
                        align=(Segment("sil", 0, 10), Segment("hey", 10, 30)), ww_end_s=0.3 + i)
        for i in range(num_pos)
    ]
    records += [UtteranceRecord(f"neg{i}", f"neg{i}.wav", "neg", i) for i in range(num_neg)]
    return records


def test_manifest_round_trip(tmp_path):
    """REQ-FUNC-AUD-010: Records survive a JSON-lines round trip."""
    manifest = Manifest(_records(), "train")
    path = tmp_path / "data" / "train.jsonl"
    write_manifest(path, manifest)
    assert len(path.read_text(encoding="utf-8").splitlines()) == 7
    restored = read_manifest(path)
    assert restored.records == manifest.records
    assert restored.split == "train"
    assert [r.id for r in restored.positives] == ["pos0", "pos1", "pos2", "pos3"]


def test_record_for_synth_utterance():
    utt = synth_corpus(CorpusSpec(DatasetKind.SNIPS, num_positive=1, seed=2))[0]
    record = record_for(utt, "audio/x.wav")
    assert record.is_positive
    assert record.ww_end_s == utt.ww_end_s
    assert UtteranceRecord.from_dict(record.to_dict()).align == tuple(utt.alignment)


def test_invalid_records(tmp_path):
    with pytest.raises(ConfigError):
        UtteranceRecord.from_dict({"id": "a", "wav": "a.wav", "kind": "maybe", "speaker": 0})
    with pytest.raises(ConfigError):
        Manifest([*_records(1, 0), *_records(1, 0)])
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "wav": "a.wav", "kind": "pos", "speaker": 0}\n{"id": \n',
                    encoding="utf-8")
    with pytest.raises(FormatError, match=":2:"):
        read_manifest(path)


def test_resolve_wav(tmp_path):
    record = UtteranceRecord("a", "sub/a.wav", "neg", 0)
    assert resolve_wav(record, tmp_path) == tmp_path / "sub" / "a.wav"
    absolute = UtteranceRecord("b", str(tmp_path / "b.wav"), "neg", 0)
    assert resolve_wav(absolute, "/elsewhere") == tmp_path / "b.wav"


def test_subsets_are_nested_prefixes():
    """REQ-FUNC-AUD-010: Smaller subsets are prefixes of larger ones and keep all negatives."""
    manifest = Manifest(_records(num_pos=4, num_neg=3))
    small, large, everything = make_subsets(manifest, [1, 3, "all"])
    assert [r.id for r in small.positives] == ["pos0"]
    assert [r.id for r in large.positives] == ["pos0", "pos1", "pos2"]
    assert len(everything.positives) == 4
    assert all(len(s.negatives) == 3 for s in (small, large, everything))
    assert {r.id for r in small.records} <= {r.id for r in large.records}
    with pytest.raises(ConfigError):
        subset_positives(manifest, 5)


def test_eval_concat_pairs_same_speaker(tmp_path):
    """REQ-FUNC-AUD-010: Each positive is followed by a negative of its own speaker."""
    records = _records(num_pos=3, num_neg=1)
    for i, record in enumerate(records):
        write_wav(tmp_path / record.wav, AudioBuffer(np.full(1600 * (i + 1), 0.1)))
    concat, skipped = make_eval_concat(Manifest(records, "eval"), tmp_path)

    # Only speaker 0 has a negative, so pos1 is skipped.
    assert skipped == 1
    assert [r.id for r in concat.positives] == ["pos0+neg0", "pos2+neg0"]
    first = concat.positives[0]
    assert first.ww_end_s == records[0].ww_end_s
    assert len(read_wav(tmp_path / first.wav)) == 1600 + 1600 * 4
    assert [r.id for r in concat.negatives] == ["neg0"]


def test_eval_concat_needs_positives(tmp_path):
    with pytest.raises(EmptyEvalSetError):
        make_eval_concat(Manifest(_records(0, 2)), tmp_path)
