"""Streaming wake-word detection.

:class:`FrameScorer` turns feature frames into network log-probabilities in
fixed blocks of output frames, so the rows it produces do not depend on how
the input was chunked. :class:`StreamDecoder` runs Viterbi token passing over
the cyclic decoding graph and emits a :class:`DetectionEvent` when the best
token that recently crossed a wake-word completion arc beats the best other
token by the threshold margin.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeMismatchError, UnmatchedEventError
from .features import FRAME_SHIFT_S
from .graphs import POST_WW_FRAMES, POST_WW_INPUT_FRAMES, Graph, output_frames
from .tdnnf import Network
from .utils import nearest_rank_percentile

logger = logging.getLogger(__name__)

DEFAULT_BEAM = 14.0
DEFAULT_REFRACTORY = 34
DEFAULT_BLOCK = 32
MATCH_WINDOW_S = 0.5
_NEVER = -(10**9)


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder knobs.

    ``refractory_frames`` and ``block_frames`` count output frames (30 ms);
    ``chunk_frames`` counts input frames handed to :meth:`StreamDecoder.push`.
    """

    threshold: float = 0.0
    beam: float = DEFAULT_BEAM
    chunk_frames: int = 160
    refractory_frames: int = DEFAULT_REFRACTORY
    block_frames: int = DEFAULT_BLOCK

    def __post_init__(self) -> None:
        if not self.beam > 0:
            raise ConfigError(f"beam must be positive, got {self.beam}", field="beam")
        if self.refractory_frames < POST_WW_FRAMES:
            raise ConfigError(
                f"refractory_frames must cover the {POST_WW_FRAMES}-frame post-wake-word span",
                field="refractory_frames",
            )
        if self.chunk_frames < 1:
            raise ConfigError("chunk_frames must be at least 1", field="chunk_frames")
        if self.block_frames < 1:
            raise ConfigError("block_frames must be at least 1", field="block_frames")
        if math.isnan(self.threshold):
            raise ConfigError("threshold is NaN", field="threshold")


@dataclass(frozen=True)
class DetectionEvent:
    trigger_time_s: float
    score_margin: float
    ww_end_estimate_s: float
    frame: int = 0
    completion_frame: int = 0


def completion_to_ww_end(completion_frame: int, subsample: int = 3) -> float:
    """Estimated wake-word end for a completion arc crossed at ``completion_frame``."""
    return max(0.0, (subsample * completion_frame - POST_WW_INPUT_FRAMES) * FRAME_SHIFT_S)


# ---------------------------------------------------------------------------
# Acoustic scoring
# ---------------------------------------------------------------------------
class FrameScorer:
    """Incremental network evaluation with chunking-independent results.

    Output frame ``j`` sees input frames ``3j - left .. 3j + right``; the
    input is padded by edge replication like :meth:`Network.forward`. Output
    frames are computed in blocks of ``block_frames``; a block runs once its
    whole window is buffered, and the final partial block runs in
    :meth:`finish`.
    """

    def __init__(self, net: Network, block_frames: int = DEFAULT_BLOCK):
        self.net = net
        self.block = block_frames
        self.step = net.config.subsample
        self.left = net.left_context
        self.right = net.right_context
        self._buffer = np.zeros((0, net.config.input_dim), dtype=net.dtype)
        self._origin = 0  # padded row index of _buffer[0]
        self._next = 0  # first output frame not yet computed
        self._inputs = 0
        self._finished = False

    @property
    def frames_in(self) -> int:
        return self._inputs

    @property
    def frames_out(self) -> int:
        return self._next

    def _window_end(self, first: int, count: int) -> int:
        return self.step * (first + count - 1) + self.left + self.right + 1

    def _available(self) -> int:
        return self._origin + self._buffer.shape[0]

    def _run(self, count: int) -> np.ndarray:
        start = self.step * self._next
        end = self._window_end(self._next, count)
        window = self._buffer[start - self._origin : end - self._origin]
        rows = self.net.forward_window(window).output[:count]
        self._next += count
        # The last frame stays buffered for right-edge padding.
        drop = min(self.step * self._next - self._origin, self._buffer.shape[0] - 1)
        self._buffer = self._buffer[drop:]
        self._origin += drop
        return rows

    def push(self, features: np.ndarray) -> np.ndarray:
        """Buffer input frames; return the log-probability rows that became computable."""
        if self._finished:
            raise RuntimeError("push after finish")
        frames = np.asarray(features, dtype=self.net.dtype)
        if frames.ndim != 2 or frames.shape[1] != self.net.config.input_dim:
            raise ShapeMismatchError(
                f"expected T x {self.net.config.input_dim} features, got {frames.shape}",
                expected=self.net.config.input_dim, actual=frames.shape,
            )
        if frames.shape[0] == 0:
            return self._empty()
        count = frames.shape[0]
        if self._inputs == 0:
            frames = np.concatenate([np.repeat(frames[:1], self.left, axis=0), frames])
        self._inputs += count
        self._buffer = np.concatenate([self._buffer, frames])
        out = []
        while self._window_end(self._next, self.block) <= self._available():
            out.append(self._run(self.block))
        return np.concatenate(out) if out else self._empty()

    def finish(self) -> np.ndarray:
        """Pad the right edge and return every remaining row."""
        if self._finished or self._inputs == 0:
            self._finished = True
            return self._empty()
        self._finished = True
        last = self._buffer[-1:]
        self._buffer = np.concatenate([self._buffer, np.repeat(last, self.right, axis=0)])
        total = output_frames(self._inputs, self.step)
        out = []
        while self._next < total:
            out.append(self._run(min(self.block, total - self._next)))
        return np.concatenate(out) if out else self._empty()

    def _empty(self) -> np.ndarray:
        out_dim = self.net.config.output_dim
        assert out_dim is not None
        return np.zeros((0, out_dim), dtype=self.net.dtype)


# ---------------------------------------------------------------------------
# Token passing
# ---------------------------------------------------------------------------
class TriggerRule:
    """Threshold on the margin plus a refractory window after each event."""

    def __init__(self, threshold: float, refractory_frames: int):
        self.threshold = threshold
        self.refractory = refractory_frames
        self.blocked_until = -1

    def fires(self, frame: int, margin: float, completion_frame: int) -> bool:
        if self.threshold == math.inf or completion_frame < 0:
            return False
        if margin < self.threshold or completion_frame <= self.blocked_until:
            return False
        self.blocked_until = frame + self.refractory
        return True


@dataclass
class DecoderState:
    """Active tokens: per graph state the best score and its last completion frame."""

    scores: np.ndarray
    completions: np.ndarray
    frames: int = 0
    offset: float = 0.0
    margins: list[float] = field(default_factory=list)
    margin_completions: list[int] = field(default_factory=list)

    @classmethod
    def initial(cls, graph: Graph) -> DecoderState:
        scores = np.full(graph.num_states, -np.inf)
        scores[graph.start] = 0.0
        return cls(scores, np.full(graph.num_states, _NEVER, dtype=np.int64))

    @property
    def num_active(self) -> int:
        return int(np.count_nonzero(np.isfinite(self.scores)))


class StreamDecoder:
    """Online detector over one stream.

    One instance is single-threaded; the network and graph may be shared by
    decoders running in other threads.
    """

    def __init__(self, net: Network | None, graph: Graph, config: DecoderConfig | None = None):
        if graph.num_arcs == 0 or len(graph.completion_arcs) == 0:
            raise ShapeMismatchError(f"{graph.role} graph has no wake-word completion arcs")
        if net is not None and net.config.output_dim != graph.pdf_count:
            raise ShapeMismatchError(
                "network outputs do not match the decoding graph",
                expected=graph.pdf_count, actual=net.config.output_dim,
            )
        self.net = net
        self.graph = graph
        self.config = config or DecoderConfig()
        self.subsample = 3 if net is None else net.config.subsample
        self.scorer = None if net is None else FrameScorer(net, self.config.block_frames)
        self.rule = TriggerRule(self.config.threshold, self.config.refractory_frames)
        self.state = DecoderState.initial(graph)
        self.events: list[DetectionEvent] = []

        order = np.argsort(graph.dst, kind="stable")
        self._src = graph.src[order]
        self._dst = graph.dst[order]
        self._label = graph.label[order]
        self._weight = graph.weight[order]
        assert graph.completion is not None
        self._completion = graph.completion[order]
        self._starts = np.flatnonzero(np.r_[True, self._dst[1:] != self._dst[:-1]])
        self._targets = self._dst[self._starts]
        self._segment = np.repeat(np.arange(len(self._starts)),
                                  np.diff(np.r_[self._starts, len(self._dst)]))

    # -- input ----------------------------------------------------------------
    def push(self, features: np.ndarray) -> list[DetectionEvent]:
        """Feed input feature frames; returns the events they triggered."""
        if self.scorer is None:
            raise RuntimeError("decoder was built without a network; use push_logp")
        return self.push_logp(self.scorer.push(features))

    def finish(self) -> list[DetectionEvent]:
        if self.scorer is None:
            return []
        return self.push_logp(self.scorer.finish())

    def push_logp(self, logp: np.ndarray) -> list[DetectionEvent]:
        """Advance over already computed log-probability rows."""
        rows = np.asarray(logp, dtype=np.float64)
        if rows.ndim != 2 or (rows.shape[0] and rows.shape[1] != self.graph.pdf_count):
            raise ShapeMismatchError(
                "log-probability rows do not match the graph", self.graph.pdf_count, rows.shape
            )
        fired = []
        for row in rows:
            event = self._advance(row)
            if event is not None:
                fired.append(event)
        self.events.extend(fired)
        return fired

    # -- search ---------------------------------------------------------------
    def _advance(self, row: np.ndarray) -> DetectionEvent | None:
        state = self.state
        t = state.frames
        cand = state.scores[self._src] + self._weight + row[self._label]
        best = np.maximum.reduceat(cand, self._starts)
        hits = np.flatnonzero(cand == best[self._segment])
        winner = hits[np.r_[True, self._segment[hits][1:] != self._segment[hits][:-1]]]
        winner_src = self._src[winner]

        scores = np.full_like(state.scores, -np.inf)
        scores[self._targets] = best
        completions = np.full_like(state.completions, _NEVER)
        completions[self._targets] = np.where(
            self._completion[winner], t, state.completions[winner_src]
        )
        top = float(np.max(scores))
        if not math.isfinite(top):
            logger.warning("all tokens died at frame %d; restarting from the start state", t)
            fresh = DecoderState.initial(self.graph)
            scores, completions, top = fresh.scores, fresh.completions, 0.0
        scores[scores < top - self.config.beam] = -np.inf
        scores -= top
        state.scores = scores
        state.completions = completions
        state.offset += top
        state.frames = t + 1

        margin, completion = self._margin(t)
        state.margins.append(margin)
        state.margin_completions.append(completion)
        if not self.rule.fires(t, margin, completion):
            return None
        event = DetectionEvent(
            trigger_time_s=self.subsample * t * FRAME_SHIFT_S,
            score_margin=margin,
            ww_end_estimate_s=completion_to_ww_end(completion, self.subsample),
            frame=t,
            completion_frame=completion,
        )
        logger.debug("trigger at %.2fs, margin %.3f", event.trigger_time_s, margin)
        return event

    def _margin(self, t: int) -> tuple[float, int]:
        scores = self.state.scores
        completions = self.state.completions
        active = np.isfinite(scores)
        recent = active & (completions >= 0) & (t - completions < self.config.refractory_frames)
        if not np.any(recent):
            return -math.inf, _NEVER
        candidates = np.flatnonzero(recent)
        best = int(candidates[np.argmax(scores[candidates])])
        others = active & ~recent
        rival = float(np.max(scores[others])) if np.any(others) else -self.config.beam
        return float(scores[best]) - rival, int(completions[best])

    def best_final_score(self) -> float:
        """Un-normalized best score of a token in a final state (beam permitting)."""
        return float(np.max(self.state.scores + self.graph.final_weights)) + self.state.offset


def decode_offline(
    net: Network, graph: Graph, features: np.ndarray, config: DecoderConfig | None = None
) -> list[DetectionEvent]:
    """Decode a whole utterance; same events as any chunked sequence of pushes."""
    decoder = StreamDecoder(net, graph, config)
    decoder.push(features)
    decoder.finish()
    return decoder.events


def decode_chunked(
    net: Network,
    graph: Graph,
    features: np.ndarray,
    config: DecoderConfig | None = None,
    chunk_frames: int | None = None,
) -> StreamDecoder:
    """Feed ``features`` in chunks of ``chunk_frames`` input frames and finish the stream."""
    decoder = StreamDecoder(net, graph, config)
    size = chunk_frames or decoder.config.chunk_frames
    for first in range(0, len(features), size):
        decoder.push(features[first : first + size])
    decoder.finish()
    return decoder


# ---------------------------------------------------------------------------
# Latency
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Latency:
    decode_s: float
    lookahead_s: float

    def __str__(self) -> str:
        return f"{self.decode_s:.2f}+{self.lookahead_s:.2f} s"


def lookahead_s(right_context: int) -> float:
    return right_context * FRAME_SHIFT_S


def match_event(
    events: Iterable[DetectionEvent], ref_ww_end_s: float, window_s: float = MATCH_WINDOW_S
) -> DetectionEvent | None:
    """Earliest event whose wake-word end estimate lies within ``window_s`` of the reference."""
    for event in sorted(events, key=lambda e: e.trigger_time_s):
        if abs(event.ww_end_estimate_s - ref_ww_end_s) <= window_s + 1e-9:
            return event
    return None


def measure_latency(
    events: Iterable[DetectionEvent], ref_ww_end_s: float, right_context: int
) -> Latency:
    """Trigger time minus the true wake-word end, plus the look-ahead term.

    Raises:
        UnmatchedEventError: If no event matches the reference.
    """
    event = match_event(events, ref_ww_end_s)
    if event is None:
        raise UnmatchedEventError(f"no event near the wake-word end at {ref_ww_end_s:.2f}s")
    return Latency(round(event.trigger_time_s - ref_ww_end_s, 6), lookahead_s(right_context))


@dataclass
class LatencyReport:
    latencies: list[float]
    lookahead_s: float

    @property
    def p90(self) -> float | None:
        if not self.latencies:
            return None
        return nearest_rank_percentile(self.latencies, 90)

    def label(self) -> str:
        p90 = self.p90
        return "X" if p90 is None else str(Latency(p90, self.lookahead_s))


def latency_report(latencies: Sequence[float], right_context: int) -> LatencyReport:
    return LatencyReport(list(latencies), lookahead_s(right_context))
