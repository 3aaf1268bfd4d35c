"""Tests for the streaming detector and latency reporting (REQ-FUNC-DEC-001..004)."""

import math

import numpy as np
import pytest

from core.dataset import features_of
from core.decoder import (
    DecoderConfig,
    DetectionEvent,
    FrameScorer,
    StreamDecoder,
    TriggerRule,
    completion_to_ww_end,
    decode_chunked,
    decode_offline,
    latency_report,
    match_event,
    measure_latency,
)
from core.errors import ConfigError, ShapeMismatchError, UnmatchedEventError
from core.graphs import POST_WW_FRAMES, build_decoding, iter_paths
from core.synth import CorpusSpec, synth_corpus
from core.tdnnf import Network, load_architecture
from core.topology import DatasetKind, UnitKind, build_topology

TOPOLOGY = build_topology(DatasetKind.SNIPS)
GRAPH = build_decoding(DatasetKind.SNIPS, TOPOLOGY)


@pytest.fixture(scope="module")
def scored_net():
    net = Network(load_architecture("tiny-student").with_output_dim(18), seed=3,
                  dtype=np.float64)
    rng = np.random.default_rng(11)
    last = len(net.config.layers) - 1
    for name in net.layer_params(last):
        net.params[name] = rng.standard_normal(net.params[name].shape)
    return net


@pytest.fixture(scope="module")
def positive_features():
    utt = synth_corpus(CorpusSpec(DatasetKind.SNIPS, num_positive=1, seed=4))[0]
    return features_of(utt)


def _rows(plan, penalty=10.0):
    """One log-probability row per frame favouring the given (unit, state)."""
    rows = []
    for unit, state, count in plan:
        row = np.full(TOPOLOGY.pdf_count, -penalty)
        row[TOPOLOGY.pdf_of(unit, state, False)] = 0.0
        row[TOPOLOGY.pdf_of(unit, state, True)] = 0.0
        rows.extend([row] * count)
    return np.array(rows)


def _wake_word(silence_after, hold_last=0):
    last = DatasetKind.SNIPS.ww_states - 1
    ww = [(UnitKind.WAKE_WORD, s, 3 + (hold_last if s == last else 0)) for s in range(last + 1)]
    return [(UnitKind.SILENCE, 0, 10), *ww, (UnitKind.SILENCE, 0, silence_after)]


def test_scorer_rows_match_full_forward(scored_net, positive_features):
    scorer = FrameScorer(scored_net, block_frames=8)
    rows = [scorer.push(positive_features[i : i + 13])
            for i in range(0, len(positive_features), 13)]
    rows.append(scorer.finish())
    np.testing.assert_allclose(np.concatenate(rows),
                               scored_net.forward(positive_features).output, atol=1e-10)


@pytest.mark.parametrize("chunk", [1, 7, 32, None])
def test_events_do_not_depend_on_chunking(scored_net, positive_features, chunk):
    """REQ-FUNC-DEC-001: Events and margins are identical for every chunk size."""
    config = DecoderConfig(threshold=-math.inf, block_frames=8)
    whole = decode_chunked(scored_net, GRAPH, positive_features, config,
                           chunk_frames=len(positive_features))
    chunked = decode_chunked(scored_net, GRAPH, positive_features, config,
                             chunk_frames=chunk or len(positive_features))
    assert chunked.events == whole.events
    assert chunked.state.margins == whole.state.margins
    assert decode_offline(scored_net, GRAPH, positive_features, config) == whole.events


def test_wake_word_path_fires_once():
    decoder = StreamDecoder(None, GRAPH, DecoderConfig(threshold=5.0))
    events = decoder.push_logp(_rows(_wake_word(silence_after=60)))
    assert len(events) == 1
    event = events[0]
    assert event.score_margin >= 5.0
    assert event.trigger_time_s == pytest.approx(3 * event.frame * 0.01)
    assert event.ww_end_estimate_s == pytest.approx(completion_to_ww_end(event.completion_frame))


def test_event_waits_for_post_wake_word_span():
    """REQ-FUNC-DEC-002: With the last state held over the post-wake-word span, the trigger
    comes after that span and the end estimate lands on the true end."""
    rows = _rows(_wake_word(silence_after=60, hold_last=POST_WW_FRAMES))
    ww_end = 10 + 3 * DatasetKind.SNIPS.ww_states
    events = StreamDecoder(None, GRAPH, DecoderConfig(threshold=5.0)).push_logp(rows)
    assert len(events) == 1
    assert events[0].frame >= ww_end + POST_WW_FRAMES
    assert events[0].ww_end_estimate_s == pytest.approx(3 * ww_end * 0.01, abs=0.03)


def test_rows_wait_for_right_context(scored_net, positive_features):
    """REQ-FUNC-DEC-001: No output frame is scored before its right context has arrived."""
    decoder = StreamDecoder(scored_net, GRAPH, DecoderConfig(threshold=-math.inf, block_frames=4))
    assert decoder.scorer is not None
    for i in range(0, len(positive_features), 5):
        decoder.push(positive_features[i : i + 5])
        scored = decoder.scorer.frames_out
        if scored:
            assert decoder.scorer.frames_in >= 3 * (scored - 1) + scored_net.right_context + 1
    for event in decoder.events:
        assert event.frame < decoder.scorer.frames_out


def test_raising_threshold_never_adds_events():
    """REQ-FUNC-DEC-002: Event counts on a fixed stream do not grow with the threshold."""
    stream = np.concatenate([_rows(_wake_word(silence_after=40), penalty)
                             for penalty in (1.0, 3.0, 6.0, 12.0)])
    reference = StreamDecoder(None, GRAPH, DecoderConfig(threshold=math.inf))
    reference.push_logp(stream)
    finite = [m for m in reference.state.margins if math.isfinite(m)]
    grid = [-math.inf, *np.quantile(finite, np.linspace(0, 1, 9)).tolist(), math.inf]
    counts = []
    for threshold in grid:
        decoder = StreamDecoder(None, GRAPH, DecoderConfig(threshold=threshold))
        counts.append(len(decoder.push_logp(stream)))
    assert counts == sorted(counts, reverse=True)
    assert counts[0] > 0
    assert counts[-1] == 0


@pytest.mark.parametrize("kind", [DatasetKind.SNIPS, DatasetKind.FLUENCY])
@pytest.mark.parametrize("frames", [1, 3, 6])
def test_unpruned_search_matches_exhaustive_viterbi(kind, frames):
    """REQ-FUNC-DEC-001: With an infinite beam the best final score is the Viterbi optimum."""
    topology = build_topology(kind)
    graph = build_decoding(kind, topology)
    logp = np.random.default_rng(frames).standard_normal((frames, topology.pdf_count))
    decoder = StreamDecoder(None, graph, DecoderConfig(beam=math.inf))
    decoder.push_logp(logp)
    best = max(weight + sum(logp[t, pdf] for t, pdf in enumerate(labels))
               for labels, weight in iter_paths(graph, frames))
    assert decoder.best_final_score() == pytest.approx(best, abs=1e-9)


def test_infinite_threshold_never_fires():
    """REQ-FUNC-DEC-002: A threshold of +inf produces no events."""
    decoder = StreamDecoder(None, GRAPH, DecoderConfig(threshold=math.inf))
    assert decoder.push_logp(_rows(_wake_word(silence_after=20) * 3)) == []


def test_refractory_period_suppresses_repeats():
    """REQ-FUNC-DEC-002: A second wake word inside the refractory window is ignored."""
    close = StreamDecoder(None, GRAPH, DecoderConfig(threshold=5.0))
    close.push_logp(_rows(_wake_word(silence_after=2) * 2))
    assert len(close.events) == 1

    apart = StreamDecoder(None, GRAPH, DecoderConfig(threshold=5.0))
    apart.push_logp(_rows(_wake_word(silence_after=40) * 2))
    assert len(apart.events) == 2
    first, second = apart.events
    assert second.completion_frame > first.frame + 34


def test_trigger_rule():
    """REQ-FUNC-DEC-002: Threshold and refractory window of the trigger rule."""
    rule = TriggerRule(0.5, 34)
    assert rule.fires(10, 1.0, 8)
    assert not rule.fires(20, 2.0, 9)
    assert not rule.fires(50, 0.1, 45)
    assert rule.fires(50, 2.0, 45)
    assert not rule.fires(60, 2.0, -1)
    assert not TriggerRule(math.inf, 34).fires(0, 1e9, 0)


def test_ww_end_estimate():
    assert completion_to_ww_end(10) == pytest.approx(0.2)
    assert completion_to_ww_end(2) == 0.0


def test_decoder_config_validation():
    with pytest.raises(ConfigError) as excinfo:
        DecoderConfig(refractory_frames=3)
    assert excinfo.value.field == "refractory_frames"
    with pytest.raises(ConfigError):
        DecoderConfig(threshold=math.nan)
    with pytest.raises(ConfigError):
        DecoderConfig(beam=0.0)


def test_shape_errors(scored_net):
    fluency = Network(load_architecture("tiny-student").with_output_dim(22), seed=0)
    with pytest.raises(ShapeMismatchError):
        StreamDecoder(fluency, GRAPH)
    decoder = StreamDecoder(None, GRAPH)
    with pytest.raises(ShapeMismatchError):
        decoder.push_logp(np.zeros((3, 22)))
    scorer = FrameScorer(scored_net)
    with pytest.raises(ShapeMismatchError):
        scorer.push(np.zeros((5, 40)))
    scorer.finish()
    with pytest.raises(RuntimeError):
        scorer.push(np.zeros((5, 64)))


def test_latency_p90_and_lookahead():
    """REQ-FUNC-DEC-003: Nearest-rank p90 plus the right-context look-ahead."""
    values = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.13, 0.30]
    report = latency_report(values, right_context=10)
    assert report.p90 == pytest.approx(0.13)
    assert report.label() == "0.13+0.10 s"
    assert latency_report([], right_context=10).label() == "X"


def test_measure_latency_matches_nearest_event():
    """REQ-FUNC-DEC-003: Latency is trigger time minus the true wake-word end."""
    events = [
        DetectionEvent(trigger_time_s=4.2, score_margin=3.0, ww_end_estimate_s=4.0),
        DetectionEvent(trigger_time_s=1.23, score_margin=2.0, ww_end_estimate_s=1.0),
    ]
    latency = measure_latency(events, ref_ww_end_s=1.02, right_context=10)
    assert latency.decode_s == pytest.approx(0.21)
    assert str(latency) == "0.21+0.10 s"
    assert match_event(events, 1.5) is events[1]
    assert match_event(events, 2.6) is None


def test_unmatched_event_raises():
    """REQ-FUNC-DEC-004: No event near the reference is an error."""
    events = [DetectionEvent(trigger_time_s=1.2, score_margin=2.0, ww_end_estimate_s=1.0)]
    with pytest.raises(UnmatchedEventError):
        measure_latency(events, ref_ww_end_s=3.0, right_context=10)
    with pytest.raises(UnmatchedEventError):
        measure_latency([], ref_ww_end_s=1.0, right_context=10)
