"""Numerator, denominator and decoding graphs at the output frame rate.

Every graph here is built by expanding a small unit-level grammar into HMM
states. The expansion is epsilon-free: each arc emits exactly one pdf-id,
so a path of T arcs explains T output frames. Weights are chosen so that
every accepted path of length T has total log-weight ``T * log(0.5)``:

* the arc leaving the start state carries 0,
* every other arc (self-loop, in-unit forward, unit exit) carries log(0.5),
* a final state carries the exit weight log(0.5).

Because every graph follows the same rule, a numerator path accepted by the
denominator always has the same weight in both.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import deque
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (
    AlignmentError,
    EmptyLatticeError,
    FormatError,
    GraphError,
    ShapeMismatchError,
    UnknownTranscriptError,
)
from .synth import SILENCE_UNIT, Segment
from .topology import (
    FORWARD_LOGPROB,
    SELFLOOP_LOGPROB,
    DatasetKind,
    HmmTopology,
    UnitKind,
    build_topology,
)

logger = logging.getLogger(__name__)

EPSILON = -1
EXIT_LOGPROB = FORWARD_LOGPROB
SUBSAMPLE = 3
POST_WW_INPUT_FRAMES = 10
POST_WW_FRAMES = -(-POST_WW_INPUT_FRAMES // SUBSAMPLE)  # 4 output frames
DEFAULT_TOLERANCE = 2

GRAPH_MAGIC = b"WFGRAPH1"

UNIT_CODES = {kind: code for code, kind in enumerate(UnitKind)}
_NO_UNIT = -1

_QUAD = np.dtype([("src", "<u4"), ("dst", "<u4"), ("label", "<i4"), ("weight", "<f4")])


def output_frames(num_input_frames: int, subsample: int = SUBSAMPLE) -> int:
    """Number of network outputs for ``num_input_frames`` (inputs 0, 3, 6, ...)."""
    return -(-num_input_frames // subsample)


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False, kw_only=True)
class Graph:
    """Weighted directed graph with pdf-id labels.

    ``state_unit`` and ``state_index`` record which unit HMM state each graph
    state instantiates (``-1`` for the start state). ``completion`` flags the
    arcs that leave the last wake-word state of a decoding graph.
    """

    num_states: int
    start: int
    final_weights: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    weight: np.ndarray
    pdf_count: int
    kind: DatasetKind
    role: str
    completion: np.ndarray | None = None
    state_unit: np.ndarray | None = None
    state_index: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.num_states
        if not 0 <= self.start < n:
            raise GraphError(f"start state {self.start} out of range [0, {n})")
        if self.final_weights.shape != (n,):
            raise GraphError("final_weights must hold one weight per state")
        lengths = {len(self.src), len(self.dst), len(self.label), len(self.weight)}
        if len(lengths) != 1:
            raise GraphError("arc arrays differ in length")
        if self.num_arcs:
            ends = np.concatenate([self.src, self.dst])
            if ends.min() < 0 or ends.max() >= n:
                raise GraphError(f"{self.role}: arc endpoint outside [0, {n})")
            if self.label.min() < EPSILON or self.label.max() >= self.pdf_count:
                raise GraphError(f"{self.role}: arc label outside [-1, {self.pdf_count})")
        if self.completion is None:
            object.__setattr__(self, "completion", np.zeros(self.num_arcs, dtype=bool))
        if self.state_unit is None:
            object.__setattr__(self, "state_unit", np.full(n, _NO_UNIT, dtype=np.int64))
        if self.state_index is None:
            object.__setattr__(self, "state_index", np.full(n, _NO_UNIT, dtype=np.int64))

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def finals(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.final_weights))

    @property
    def has_epsilon(self) -> bool:
        return bool(np.any(self.label == EPSILON))

    @property
    def completion_arcs(self) -> np.ndarray:
        assert self.completion is not None
        return np.flatnonzero(self.completion)

    def states_of(self, unit: UnitKind, index: int | None = None) -> np.ndarray:
        """Graph states that instantiate ``unit`` (optionally only its HMM state ``index``)."""
        assert self.state_unit is not None and self.state_index is not None
        mask = self.state_unit == UNIT_CODES[unit]
        if index is not None:
            mask &= self.state_index == index
        return np.flatnonzero(mask)

    def _adjacency(self) -> csr_matrix:
        data = np.ones(self.num_arcs, dtype=np.int8)
        shape = (self.num_states, self.num_states)
        return csr_matrix((data, (self.src, self.dst)), shape=shape)

    def reachable(self) -> np.ndarray:
        """Boolean mask of states reachable from the start state."""
        order = breadth_first_order(self._adjacency(), self.start, directed=True,
                                    return_predecessors=False)
        mask = np.zeros(self.num_states, dtype=bool)
        mask[order] = True
        return mask

    def coreachable(self) -> np.ndarray:
        """Boolean mask of states from which some final state can be reached."""
        finals = self.finals
        if len(finals) == 0:
            return np.zeros(self.num_states, dtype=bool)
        # A virtual sink, linked to every final state, lets one BFS cover all finals.
        n = self.num_states
        rows = np.concatenate([self.dst, np.full(len(finals), n)])
        cols = np.concatenate([self.src, finals])
        data = np.ones(len(rows), dtype=np.int8)
        adjacency = csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
        order = breadth_first_order(adjacency, n, directed=True, return_predecessors=False)
        mask = np.zeros(n + 1, dtype=bool)
        mask[order] = True
        return mask[:n]

    @property
    def is_connected(self) -> bool:
        return bool(np.all(self.reachable() & self.coreachable()))

    @property
    def is_acyclic(self) -> bool:
        if np.any(self.src == self.dst):
            return False
        count, _ = connected_components(self._adjacency(), directed=True, connection="strong")
        return int(count) == self.num_states

    def path_weight(self, pdfs: Sequence[int]) -> float:
        """Best total log-weight of a start-to-final path emitting ``pdfs`` (-inf if none)."""
        scores = np.full(self.num_states, -np.inf)
        scores[self.start] = 0.0
        for pdf in pdfs:
            mask = self.label == pdf
            nxt = np.full(self.num_states, -np.inf)
            np.maximum.at(nxt, self.dst[mask], scores[self.src[mask]] + self.weight[mask])
            scores = nxt
            if not np.any(np.isfinite(scores)):
                return -math.inf
        return float(np.max(scores + self.final_weights))

    def accepts(self, pdfs: Sequence[int]) -> bool:
        return math.isfinite(self.path_weight(pdfs))

    def min_path_length(self) -> int | None:
        """Fewest arcs on any start-to-final path, or None when no final is reachable."""
        finals = set(self.finals.tolist())
        seen = {self.start}
        frontier = [self.start]
        steps = 0
        out_arcs: dict[int, list[int]] = {}
        for s, d in zip(self.src.tolist(), self.dst.tolist(), strict=True):
            out_arcs.setdefault(s, []).append(d)
        while frontier:
            steps += 1
            nxt = []
            for state in frontier:
                for target in out_arcs.get(state, ()):
                    if target in finals:
                        return steps
                    if target not in seen:
                        seen.add(target)
                        nxt.append(target)
            frontier = nxt
        return None

    def header(self) -> dict[str, Any]:
        assert self.state_unit is not None and self.state_index is not None
        finals = self.finals
        return {
            "role": self.role,
            "kind": self.kind.value,
            "pdf_count": self.pdf_count,
            "num_states": self.num_states,
            "start": self.start,
            "finals": [[int(s), float(self.final_weights[s])] for s in finals],
            "completion": self.completion_arcs.tolist(),
            "state_unit": self.state_unit.tolist(),
            "state_index": self.state_index.tolist(),
            "num_arcs": self.num_arcs,
        }


@dataclass(frozen=True, eq=False, kw_only=True)
class NumeratorLattice(Graph):
    """Acyclic frame-synchronous graph: arcs go from layer t to layer t + 1."""

    layer: np.ndarray
    num_frames: int

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.layer.shape != (self.num_states,):
            raise GraphError("layer must hold one entry per state")
        if self.has_epsilon:
            raise GraphError("numerator lattices are epsilon-free")
        if np.any(self.layer[self.dst] != self.layer[self.src] + 1):
            raise GraphError("lattice arcs must advance exactly one layer")
        if self.layer[self.start] != 0 or np.any(self.layer[self.finals] != self.num_frames):
            raise GraphError("lattice start must be layer 0 and finals layer T")

    def arcs_by_frame(self) -> list[np.ndarray]:
        """Arc indices grouped by the output frame they emit."""
        frame = self.layer[self.src]
        order = np.argsort(frame, kind="stable")
        bounds = np.searchsorted(frame[order], np.arange(self.num_frames + 1))
        return [order[bounds[t] : bounds[t + 1]] for t in range(self.num_frames)]

    def header(self) -> dict[str, Any]:
        data = super().header()
        data["layer"] = self.layer.tolist()
        data["num_frames"] = self.num_frames
        return data


class _GraphBuilder:
    def __init__(self) -> None:
        self.units: list[int] = []
        self.indices: list[int] = []
        self.layers: list[int] = []
        self.arcs: list[tuple[int, int, int, float, bool]] = []
        self.finals: dict[int, float] = {}

    def add_state(self, unit: int = _NO_UNIT, index: int = _NO_UNIT, layer: int = 0) -> int:
        self.units.append(unit)
        self.indices.append(index)
        self.layers.append(layer)
        return len(self.units) - 1

    def add_arc(
        self, src: int, dst: int, label: int, weight: float, completion: bool = False
    ) -> None:
        self.arcs.append((src, dst, label, weight, completion))

    def arrays(self) -> dict[str, Any]:
        n = len(self.units)
        final_weights = np.full(n, -np.inf)
        for state, w in self.finals.items():
            final_weights[state] = w
        arcs = self.arcs
        return {
            "num_states": n,
            "start": 0,
            "final_weights": final_weights,
            "src": np.array([a[0] for a in arcs], dtype=np.int64),
            "dst": np.array([a[1] for a in arcs], dtype=np.int64),
            "label": np.array([a[2] for a in arcs], dtype=np.int64),
            "weight": np.array([a[3] for a in arcs], dtype=np.float64),
            "completion": np.array([a[4] for a in arcs], dtype=bool),
            "state_unit": np.array(self.units, dtype=np.int64),
            "state_index": np.array(self.indices, dtype=np.int64),
        }


def _trim_arrays(
    arrays: dict[str, Any], keep: np.ndarray, extra: Sequence[str] = ()
) -> dict[str, Any]:
    remap = np.full(len(keep), -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    arc_keep = keep[arrays["src"]] & keep[arrays["dst"]]
    out = dict(arrays)
    out["num_states"] = int(keep.sum())
    out["start"] = int(remap[arrays["start"]])
    for name in ("final_weights", "state_unit", "state_index", *extra):
        out[name] = arrays[name][keep]
    for name in ("label", "weight", "completion"):
        out[name] = arrays[name][arc_keep]
    out["src"] = remap[arrays["src"][arc_keep]]
    out["dst"] = remap[arrays["dst"][arc_keep]]
    return out


def trim(graph: Graph) -> Graph:
    """Drop states that are not both reachable and co-reachable."""
    keep = graph.reachable() & graph.coreachable()
    if np.all(keep):
        return graph
    if not keep[graph.start]:
        raise GraphError(f"{graph.role}: no accepted path")
    fields = {
        "num_states": graph.num_states,
        "start": graph.start,
        "final_weights": graph.final_weights,
        "src": graph.src,
        "dst": graph.dst,
        "label": graph.label,
        "weight": graph.weight,
        "completion": graph.completion,
        "state_unit": graph.state_unit,
        "state_index": graph.state_index,
    }
    if isinstance(graph, NumeratorLattice):
        fields["layer"] = graph.layer
        trimmed = _trim_arrays(fields, keep, extra=("layer",))
        return NumeratorLattice(
            **trimmed, pdf_count=graph.pdf_count, kind=graph.kind, role=graph.role,
            num_frames=graph.num_frames,
        )
    trimmed = _trim_arrays(fields, keep)
    return Graph(**trimmed, pdf_count=graph.pdf_count, kind=graph.kind, role=graph.role)


# ---------------------------------------------------------------------------
# Grammars
# ---------------------------------------------------------------------------
class GrammarArc(NamedTuple):
    src: int
    dst: int
    unit: UnitKind | None  # None = epsilon


@dataclass(frozen=True)
class Grammar:
    """Unit-level grammar; expanded into HMM states by :func:`expand_grammar`."""

    num_states: int
    start: int
    finals: frozenset[int]
    arcs: tuple[GrammarArc, ...]

    def epsilon_closure(self, state: int) -> frozenset[int]:
        closure = {state}
        queue = deque([state])
        while queue:
            current = queue.popleft()
            for arc in self.arcs:
                if arc.src == current and arc.unit is None and arc.dst not in closure:
                    closure.add(arc.dst)
                    queue.append(arc.dst)
        return frozenset(closure)

    def routes(self, max_units: int = 8) -> set[tuple[UnitKind, ...]]:
        """Distinct sequences of non-silence units on start-to-final paths.

        Paths longer than ``max_units`` grammar arcs are not explored, so the
        result is finite for cyclic grammars.
        """
        found: set[tuple[UnitKind, ...]] = set()
        stack: list[tuple[int, tuple[UnitKind, ...], int]] = [(self.start, (), 0)]
        while stack:
            state, units, depth = stack.pop()
            if state in self.finals:
                found.add(tuple(u for u in units if u is not UnitKind.SILENCE))
            if depth == max_units:
                continue
            for arc in self.arcs:
                if arc.src == state:
                    path = units if arc.unit is None else (*units, arc.unit)
                    stack.append((arc.dst, path, depth + 1))
        return found


def _chain_grammar(units: Sequence[UnitKind]) -> Grammar:
    """Optional silence, ``units`` in order, optional silence."""
    sil = UnitKind.SILENCE
    arcs = [GrammarArc(0, 1, sil), GrammarArc(0, 1, None)]
    for i, unit in enumerate(units, start=1):
        arcs.append(GrammarArc(i, i + 1, unit))
    last = len(units) + 1
    arcs += [GrammarArc(last, last + 1, sil), GrammarArc(last, last + 1, None)]
    return Grammar(last + 2, 0, frozenset({last + 1}), tuple(arcs))


def denominator_grammar(kind: DatasetKind | str) -> Grammar:
    """Hand-specified competing-hypothesis grammar for a dataset kind.

    Snips:   SIL (WW | Speech) SIL, plus a SIL-only path.
    Fluency: SIL [WW] Speech (SIL Speech)* SIL, plus a SIL-only path.
    Edge silences may be skipped.
    """
    kind = DatasetKind.parse(kind)
    ww, sp, sil = UnitKind.WAKE_WORD, UnitKind.SPEECH, UnitKind.SILENCE
    if kind is DatasetKind.SNIPS:
        arcs = (
            GrammarArc(0, 1, sil), GrammarArc(0, 1, None),
            GrammarArc(1, 2, ww),
            GrammarArc(2, 3, sil), GrammarArc(2, 3, None),
            GrammarArc(1, 4, sp),
            GrammarArc(4, 3, sil), GrammarArc(4, 3, None),
            GrammarArc(0, 3, sil),
        )
        return Grammar(5, 0, frozenset({3}), arcs)
    arcs = (
        GrammarArc(0, 1, sil), GrammarArc(0, 1, None),
        GrammarArc(1, 2, ww),
        GrammarArc(0, 2, sil), GrammarArc(0, 2, None),
        GrammarArc(2, 3, sp),
        GrammarArc(3, 4, sil), GrammarArc(3, 4, None),
        GrammarArc(3, 2, sil),
        GrammarArc(0, 4, sil),
    )
    return Grammar(5, 0, frozenset({4}), arcs)


def decoding_grammar() -> Grammar:
    """Hub state looping over SIL and Speech, with a WW branch back to the hub."""
    ww, sp, sil = UnitKind.WAKE_WORD, UnitKind.SPEECH, UnitKind.SILENCE
    arcs = (
        GrammarArc(0, 0, sil),
        GrammarArc(0, 0, sp),
        GrammarArc(0, 1, ww),
        GrammarArc(1, 0, sil),
        GrammarArc(1, 0, sp),
    )
    return Grammar(2, 0, frozenset({0, 1}), arcs)


def expand_grammar(
    grammar: Grammar, topology: HmmTopology, role: str, mark_completion: bool = False
) -> Graph:
    """Replace every unit arc of ``grammar`` by its HMM, removing epsilons."""
    closures = [grammar.epsilon_closure(s) for s in range(grammar.num_states)]
    unit_arcs = [(i, arc) for i, arc in enumerate(grammar.arcs) if arc.unit is not None]
    entries = {
        g: [i for i, arc in unit_arcs if arc.src in closures[g]] for g in range(grammar.num_states)
    }

    builder = _GraphBuilder()
    start = builder.add_state()
    first: dict[int, int] = {}
    last: dict[int, int] = {}
    first_pdf: dict[int, int] = {}
    for i, arc in unit_arcs:
        assert arc.unit is not None
        unit = topology.unit(arc.unit)
        code = UNIT_CODES[arc.unit]
        states = [builder.add_state(code, k) for k in range(unit.num_states)]
        for k, state in enumerate(states):
            builder.add_arc(state, state, unit.states[k].selfloop_pdf, SELFLOOP_LOGPROB)
            if k:
                builder.add_arc(states[k - 1], state, unit.states[k].forward_pdf, FORWARD_LOGPROB)
        first[i], last[i], first_pdf[i] = states[0], states[-1], unit.states[0].forward_pdf

    for i in entries[grammar.start]:
        builder.add_arc(start, first[i], first_pdf[i], 0.0)
    for i, arc in unit_arcs:
        completes = mark_completion and arc.unit is UnitKind.WAKE_WORD
        for j in entries[arc.dst]:
            builder.add_arc(last[i], first[j], first_pdf[j], EXIT_LOGPROB, completes)
        if closures[arc.dst] & grammar.finals:
            builder.finals[last[i]] = EXIT_LOGPROB

    graph = Graph(**builder.arrays(), pdf_count=topology.pdf_count, kind=topology.kind, role=role)
    return trim(graph)


# ---------------------------------------------------------------------------
# Transcripts and alignment-free numerators
# ---------------------------------------------------------------------------
TRANSCRIPTS: dict[DatasetKind, frozenset[tuple[UnitKind, ...]]] = {
    DatasetKind.SNIPS: frozenset({(UnitKind.WAKE_WORD,), (UnitKind.SPEECH,)}),
    DatasetKind.FLUENCY: frozenset({(UnitKind.WAKE_WORD, UnitKind.SPEECH), (UnitKind.SPEECH,)}),
}


def transcript_for(kind: DatasetKind | str, positive: bool) -> str:
    kind = DatasetKind.parse(kind)
    if not positive:
        return "Speech"
    return "WakeWord Speech" if kind.has_request else "WakeWord"


def parse_transcript(transcript: str | Sequence[str], kind: DatasetKind) -> tuple[UnitKind, ...]:
    tokens = transcript.split() if isinstance(transcript, str) else list(transcript)
    units = []
    for token in tokens:
        try:
            unit = UnitKind(token)
        except ValueError as e:
            raise UnknownTranscriptError(f"Unknown transcript token {token!r}", token) from e
        if unit is UnitKind.SILENCE:
            raise UnknownTranscriptError("Silence is implicit in transcripts", token)
        units.append(unit)
    if tuple(units) not in TRANSCRIPTS[kind]:
        text = " ".join(tokens)
        raise UnknownTranscriptError(f"Transcript {text!r} is not valid for {kind.value}", text)
    return tuple(units)


def build_numerator_free(transcript: str | Sequence[str], topology: HmmTopology) -> Graph:
    """Alignment-free numerator: the transcript's units with self-loops, optional edge silence."""
    units = parse_transcript(transcript, topology.kind)
    return expand_grammar(_chain_grammar(units), topology, role="numerator")


@lru_cache(maxsize=8)
def _denominator(kind: DatasetKind) -> Graph:
    graph = expand_grammar(denominator_grammar(kind), build_topology(kind), role="denominator")
    logger.debug("denominator graph for %s: %d states, %d arcs", kind.value,
                 graph.num_states, graph.num_arcs)
    return graph


def build_denominator(kind: DatasetKind | str, topology: HmmTopology) -> Graph:
    kind = DatasetKind.parse(kind)
    if topology.kind is not kind:
        raise ShapeMismatchError("topology kind differs from dataset kind", kind, topology.kind)
    return _denominator(kind)


def build_decoding(kind: DatasetKind | str, topology: HmmTopology) -> Graph:
    """Cyclic decoding graph; completion arcs leave the last wake-word state."""
    kind = DatasetKind.parse(kind)
    if topology.kind is not kind:
        raise ShapeMismatchError("topology kind differs from dataset kind", kind, topology.kind)
    return expand_grammar(decoding_grammar(), topology, role="decoding", mark_completion=True)


# ---------------------------------------------------------------------------
# Aligned numerators
# ---------------------------------------------------------------------------
class Span(NamedTuple):
    unit: UnitKind
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class AlignmentSpec:
    """Unit spans at the output frame rate.

    ``ww_state_bounds`` holds the aligned boundaries of the wake-word states
    (one more entry than states) when the wake word is present.
    """

    spans: tuple[Span, ...]
    num_frames: int
    ww_state_bounds: tuple[int, ...] | None = None
    uid: str = ""

    def __post_init__(self) -> None:
        cursor = 0
        for span in self.spans:
            if span.start != cursor or span.end <= span.start:
                raise AlignmentError(
                    f"{self.uid or 'alignment'}: spans must tile [0, {self.num_frames})",
                    unit=span.unit.value, length=span.length, needed=1,
                )
            cursor = span.end
        if cursor != self.num_frames:
            raise AlignmentError(
                f"{self.uid or 'alignment'}: spans end at {cursor}, expected {self.num_frames}",
                unit="", length=cursor, needed=self.num_frames,
            )
        if sum(span.unit is UnitKind.WAKE_WORD for span in self.spans) > 1:
            raise AlignmentError(
                f"{self.uid or 'alignment'}: more than one wake-word span",
                unit=UnitKind.WAKE_WORD.value, length=0, needed=1,
            )

    @property
    def ww_span(self) -> Span | None:
        return next((s for s in self.spans if s.unit is UnitKind.WAKE_WORD), None)

    @property
    def ww_end_frame(self) -> int | None:
        span = self.ww_span
        return None if span is None else span.end

    @classmethod
    def from_segments(
        cls,
        segments: Sequence[Segment],
        num_input_frames: int,
        *,
        subsample: int = SUBSAMPLE,
        uid: str = "",
    ) -> AlignmentSpec:
        """Convert 10 ms segments (``sil`` / ``ww<k>`` / ``ph<p>``) to output-rate spans.

        A boundary at input frame b moves to output frame ceil(b / subsample).
        """
        def unit_of(name: str) -> UnitKind:
            if name == SILENCE_UNIT:
                return UnitKind.SILENCE
            return UnitKind.WAKE_WORD if name.startswith("ww") else UnitKind.SPEECH

        total = output_frames(num_input_frames, subsample)
        spans: list[Span] = []
        ww_bounds: list[int] = []
        for seg in segments:
            unit = unit_of(seg.unit)
            start = min(total, -(-seg.start // subsample))
            end = min(total, -(-seg.end // subsample))
            if unit is UnitKind.WAKE_WORD:
                if not ww_bounds:
                    ww_bounds.append(start)
                ww_bounds.append(end)
            if end <= start:
                continue
            if spans and spans[-1].unit is unit:
                spans[-1] = Span(unit, spans[-1].start, end)
            elif spans and spans[-1].end != start:
                raise AlignmentError(f"{uid}: segments do not tile the utterance",
                                     unit=seg.unit, length=0, needed=1)
            else:
                spans.append(Span(unit, start, end))
        return cls(tuple(spans), total, tuple(ww_bounds) if ww_bounds else None, uid)


class ChainState(NamedTuple):
    unit: UnitKind
    state: int
    start: int
    end: int


def _spread(start: int, end: int, num_states: int) -> list[int]:
    length = end - start
    return [start + (k * length) // num_states for k in range(num_states + 1)]


def state_chain(
    align: AlignmentSpec, topology: HmmTopology, post_ww_frames: int = POST_WW_FRAMES
) -> list[ChainState]:
    """Assign every output frame to one HMM state of the aligned unit sequence.

    The last wake-word state absorbs the first ``post_ww_frames`` frames after
    the wake word. A following silence that is consumed entirely disappears.

    Raises:
        AlignmentError: If a wake-word or speech span has fewer frames than states.
    """
    spans = list(align.spans)
    for i, span in enumerate(spans):
        if span.unit is UnitKind.WAKE_WORD and i + 1 < len(spans):
            nxt = spans[i + 1]
            grab = min(post_ww_frames, nxt.length)
            spans[i] = Span(span.unit, span.start, span.end + grab)
            spans[i + 1] = Span(nxt.unit, nxt.start + grab, nxt.end)
            break
    spans = [s for s in spans if s.length > 0 or s.unit is not UnitKind.SILENCE]

    chain: list[ChainState] = []
    for span in spans:
        unit = topology.unit(span.unit)
        n = unit.num_states
        if span.length < n:
            raise AlignmentError(
                f"{align.uid or 'utterance'}: {span.unit.value} span of {span.length} frames "
                f"cannot hold {n} states",
                unit=span.unit.value, length=span.length, needed=n,
            )
        bounds = _spread(span.start, span.end, n)
        if span.unit is UnitKind.WAKE_WORD and align.ww_state_bounds is not None:
            aligned = [*align.ww_state_bounds[:-1], span.end]
            if len(aligned) == n + 1 and all(b > a for a, b in zip(aligned, aligned[1:])):
                bounds = aligned
        for k in range(n):
            chain.append(ChainState(span.unit, k, bounds[k], bounds[k + 1]))
    return chain


def build_numerator_aligned(
    align: AlignmentSpec,
    topology: HmmTopology,
    num_frames: int,
    *,
    tolerance: int = DEFAULT_TOLERANCE,
    post_ww_frames: int = POST_WW_FRAMES,
) -> NumeratorLattice:
    """Frame-expanded numerator lattice around an alignment.

    Chain state j may emit output frame t when ``start_j - tolerance <= t <
    end_j + tolerance``. Every path visits the states in order, each for at
    least one frame, so it is also a denominator path with the same weight.

    Raises:
        AlignmentError: If a span is too short for its states.
        EmptyLatticeError: If the tolerance windows leave no complete path.
    """
    if align.num_frames != num_frames:
        raise ShapeMismatchError(
            f"alignment covers {align.num_frames} frames, network gives {num_frames}",
            expected=num_frames, actual=align.num_frames,
        )
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    chain = state_chain(align, topology, post_ww_frames)
    pdfs = [
        (topology.pdf_of(c.unit, c.state, False), topology.pdf_of(c.unit, c.state, True))
        for c in chain
    ]
    lo = [max(0, c.start - tolerance) for c in chain]
    hi = [min(num_frames, c.end + tolerance) for c in chain]

    builder = _GraphBuilder()
    builder.add_state(layer=0)
    previous: dict[int, int] = {}
    for t in range(num_frames):
        current: dict[int, int] = {}
        for j, c in enumerate(chain):
            if not lo[j] <= t < hi[j]:
                continue
            incoming = []
            if t == 0 and j == 0:
                incoming.append((0, pdfs[0][0], 0.0))
            if j in previous:
                incoming.append((previous[j], pdfs[j][1], SELFLOOP_LOGPROB))
            if j - 1 in previous:
                incoming.append((previous[j - 1], pdfs[j][0], FORWARD_LOGPROB))
            if not incoming:
                continue
            node = builder.add_state(UNIT_CODES[c.unit], c.state, layer=t + 1)
            current[j] = node
            for src, label, w in incoming:
                builder.add_arc(src, node, label, w)
        previous = current
    if len(chain) - 1 in previous:
        builder.finals[previous[len(chain) - 1]] = EXIT_LOGPROB

    arrays = builder.arrays()
    if not builder.finals:
        raise EmptyLatticeError(
            f"{align.uid or 'utterance'}: no path through {len(chain)} states "
            f"in {num_frames} frames"
        )
    lattice = NumeratorLattice(
        **arrays,
        layer=np.array(builder.layers, dtype=np.int64),
        num_frames=num_frames,
        pdf_count=topology.pdf_count,
        kind=topology.kind,
        role="numerator",
    )
    result = trim(lattice)
    assert isinstance(result, NumeratorLattice)
    return result


# ---------------------------------------------------------------------------
# Graph files
# ---------------------------------------------------------------------------
def write_graph(path: str | Path, graph: Graph) -> None:
    """Write magic + u32 header length + JSON header + (src, dst, label, weight) quadruples."""
    header = json.dumps(graph.header(), sort_keys=True).encode("utf-8")
    quads = np.zeros(graph.num_arcs, dtype=_QUAD)
    quads["src"], quads["dst"] = graph.src, graph.dst
    quads["label"], quads["weight"] = graph.label, graph.weight
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(quads.tobytes())


def read_graph(path: str | Path) -> Graph:
    """Read a graph written by :func:`write_graph`. Weights come back as float32 values."""
    blob = Path(path).read_bytes()
    offset = len(GRAPH_MAGIC) + 4
    if len(blob) < offset or blob[: len(GRAPH_MAGIC)] != GRAPH_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {GRAPH_MAGIC!r}", path, GRAPH_MAGIC)
    (size,) = struct.unpack("<I", blob[len(GRAPH_MAGIC) : offset])
    try:
        header = json.loads(blob[offset : offset + size])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt header", path, GRAPH_MAGIC) from e
    payload = blob[offset + size :]
    if len(payload) != header["num_arcs"] * _QUAD.itemsize:
        raise FormatError(f"{path}: truncated arc list", path, GRAPH_MAGIC)
    quads = np.frombuffer(payload, dtype=_QUAD)
    n = int(header["num_states"])
    final_weights = np.full(n, -np.inf)
    for state, w in header["finals"]:
        final_weights[int(state)] = float(w)
    completion = np.zeros(len(quads), dtype=bool)
    completion[np.asarray(header["completion"], dtype=np.int64)] = True
    fields: dict[str, Any] = {
        "num_states": n,
        "start": int(header["start"]),
        "final_weights": final_weights,
        "src": quads["src"].astype(np.int64),
        "dst": quads["dst"].astype(np.int64),
        "label": quads["label"].astype(np.int64),
        "weight": quads["weight"].astype(np.float64),
        "completion": completion,
        "state_unit": np.asarray(header["state_unit"], dtype=np.int64),
        "state_index": np.asarray(header["state_index"], dtype=np.int64),
        "pdf_count": int(header["pdf_count"]),
        "kind": DatasetKind.parse(header["kind"]),
        "role": str(header["role"]),
    }
    if "layer" in header:
        return NumeratorLattice(
            **fields,
            layer=np.asarray(header["layer"], dtype=np.int64),
            num_frames=int(header["num_frames"]),
        )
    return Graph(**fields)


def iter_paths(graph: Graph, num_frames: int) -> Iterator[tuple[tuple[int, ...], float]]:
    """Enumerate every accepted path of ``num_frames`` arcs as (pdf sequence, log-weight).

    Exponential in ``num_frames``; meant for small graphs.
    """
    out: dict[int, list[int]] = {}
    for arc, s in enumerate(graph.src.tolist()):
        out.setdefault(s, []).append(arc)

    def walk(state: int, depth: int, labels: tuple[int, ...], weight: float
             ) -> Iterator[tuple[tuple[int, ...], float]]:
        if depth == num_frames:
            final = graph.final_weights[state]
            if np.isfinite(final):
                yield labels, weight + float(final)
            return
        for arc in out.get(state, ()):
            yield from walk(int(graph.dst[arc]), depth + 1, (*labels, int(graph.label[arc])),
                            weight + float(graph.weight[arc]))

    yield from walk(graph.start, 0, (), 0.0)

