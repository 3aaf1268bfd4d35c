"""Tests for turning corpora into training examples."""

import logging

import numpy as np
import pytest

from core.config import AugmentConfig
from core.dataset import (
    augment_policy,
    augmented_copies,
    features_of,
    lfmmi_example,
    lfmmi_examples,
    load_corpus,
    senone_examples,
    senone_targets,
    student_view,
)
from core.errors import UnknownTranscriptError
from core.features import AudioBuffer, write_wav
from core.graphs import Graph, NumeratorLattice, output_frames
from core.manifest import Manifest, record_for
from core.synth import NUM_SENONES, CorpusSpec, Segment, SynthUtterance, synth_corpus
from core.topology import DatasetKind, build_topology

NO_REVERB = AugmentConfig(copies=2, reverb_probability=0.0)


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(CorpusSpec(DatasetKind.SNIPS, num_positive=2, num_negative=2, seed=3))


def _tiny_positive():
    audio = AudioBuffer(np.zeros(800))
    return SynthUtterance("short", audio, "pos", [Segment("hey", 0, 3)], 0, DatasetKind.SNIPS,
                          (0.03,))


def test_load_corpus_reads_manifest_audio(tmp_path, corpus):
    records = []
    for utt in corpus:
        write_wav(tmp_path / f"{utt.uid}.wav", utt.audio)
        records.append(record_for(utt, f"{utt.uid}.wav"))
    loaded = load_corpus(Manifest(records), tmp_path, DatasetKind.SNIPS)
    assert [u.uid for u in loaded] == [u.uid for u in corpus]
    assert loaded[0].alignment == corpus[0].alignment
    assert loaded[0].ww_end_s == corpus[0].ww_end_s
    np.testing.assert_allclose(loaded[0].audio.samples, corpus[0].audio.samples, atol=1e-4)


def test_augment_policy(corpus):
    positive = next(u for u in corpus if u.kind == "pos")
    negative = next(u for u in corpus if u.kind == "neg")
    assert augment_policy(DatasetKind.SNIPS, negative)
    assert augment_policy(DatasetKind.FLUENCY, positive)
    assert not augment_policy(DatasetKind.FLUENCY, negative)


def test_augmented_copies(corpus):
    copies = augmented_copies(corpus, DatasetKind.SNIPS, seed=1, augment=NO_REVERB)
    assert len(copies) == 2 * len(corpus)
    assert copies[0].uid == f"{corpus[0].uid}-aug0"
    assert copies[1].uid == f"{corpus[0].uid}-aug1"
    again = augmented_copies(corpus, DatasetKind.SNIPS, seed=1, augment=NO_REVERB)
    np.testing.assert_array_equal(copies[0].audio.samples, again[0].audio.samples)
    fluency = augmented_copies(corpus, DatasetKind.FLUENCY, seed=1, augment=NO_REVERB)
    assert len(fluency) == 2 * sum(1 for u in corpus if u.kind == "pos")


def test_senone_targets(corpus):
    utt = corpus[0]
    frames = features_of(utt).shape[0]
    targets = senone_targets(utt, frames)
    assert len(targets) == output_frames(frames)
    assert targets.min() >= 0 and targets.max() < NUM_SENONES
    examples = senone_examples(corpus[:1])
    np.testing.assert_array_equal(examples[0].target, targets)


@pytest.mark.parametrize("mode", ["phone-align", "phone-align+ts"])
def test_aligned_modes_build_lattices(corpus, mode):
    topology = build_topology(DatasetKind.SNIPS)
    example = lfmmi_example(corpus[0], topology, mode)
    assert isinstance(example.target, NumeratorLattice)
    assert example.features.shape == features_of(corpus[0]).shape


def test_free_modes_build_transcript_graphs(corpus):
    topology = build_topology(DatasetKind.SNIPS)
    example = lfmmi_example(corpus[0], topology, "e2e")
    assert isinstance(example.target, Graph)
    assert not isinstance(example.target, NumeratorLattice)
    with pytest.raises(ValueError, match="unknown training mode"):
        lfmmi_example(corpus[0], topology, "ctc")


def test_unusable_utterances_are_skipped(corpus, caplog):
    topology = build_topology(DatasetKind.SNIPS)
    with pytest.raises(UnknownTranscriptError):
        lfmmi_example(_tiny_positive(), topology, "e2e")
    with caplog.at_level(logging.WARNING, logger="core.dataset"):
        examples = lfmmi_examples([*corpus, _tiny_positive()], topology, "e2e", workers=2)
    assert len(examples) == len(corpus)
    assert "skipping short" in caplog.text


def test_student_view_keeps_frame_count(corpus):
    utt = corpus[0]
    noisy, spec = student_view(utt, seed=5)
    assert spec.speed_factor == 1.0
    assert features_of(noisy).shape == features_of(utt).shape
    again, _ = student_view(utt, seed=5)
    np.testing.assert_array_equal(noisy.audio.samples, again.audio.samples)
