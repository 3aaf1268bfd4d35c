"""HMM topologies for the wake-word, general speech and silence units.

Each HMM state owns two network outputs (pdf-ids): one for the transition
into the state and one for its self-loop. Units are numbered in the order
WakeWord, Speech, Silence and pdf-ids are handed out state by state, so the
Snips topology has 18 outputs and the Fluency topology 22.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .errors import TopologyIndexError

# Transition log-weights shared by every unit.
FORWARD_LOGPROB = math.log(0.5)
SELFLOOP_LOGPROB = math.log(0.5)


class DatasetKind(str, Enum):
    SNIPS = "snips"
    FLUENCY = "fluency"

    @property
    def ww_states(self) -> int:
        return 4 if self is DatasetKind.SNIPS else 5

    @property
    def has_request(self) -> bool:
        """Whether positive utterances carry request speech after the wake word."""
        return self is DatasetKind.FLUENCY

    @property
    def ww_labels(self) -> tuple[str, ...]:
        if self is DatasetKind.SNIPS:
            return ("hey", "sni", "ps", "sil")
        return ("okay-hey", "flu", "en", "cy", "sil")

    @classmethod
    def parse(cls, value: str | DatasetKind) -> DatasetKind:
        if isinstance(value, DatasetKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError as e:
            raise TopologyIndexError(f"Unknown dataset kind {value!r}", unit=value) from e


class UnitKind(str, Enum):
    WAKE_WORD = "WakeWord"
    SPEECH = "Speech"
    SILENCE = "Silence"


@dataclass(frozen=True)
class HmmState:
    forward_pdf: int
    selfloop_pdf: int
    label: str


@dataclass(frozen=True)
class UnitDef:
    kind: UnitKind
    label: str
    states: tuple[HmmState, ...]

    @property
    def num_states(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class HmmTopology:
    kind: DatasetKind
    units: tuple[UnitDef, ...]
    pdf_count: int

    def unit(self, kind: UnitKind | str) -> UnitDef:
        try:
            wanted = UnitKind(kind)
        except ValueError as e:
            raise TopologyIndexError(f"Unknown unit {kind!r}", unit=kind) from e
        for unit in self.units:
            if unit.kind is wanted:
                return unit
        raise TopologyIndexError(f"Topology has no {wanted.value} unit", unit=kind)

    def pdf_of(self, unit: UnitKind | str, state: int, is_selfloop: bool) -> int:
        """Return the pdf-id of a state's forward or self-loop output."""
        definition = self.unit(unit)
        if not 0 <= state < definition.num_states:
            raise TopologyIndexError(
                f"State {state} out of range for {definition.kind.value} "
                f"({definition.num_states} states)",
                unit=unit,
                state=state,
            )
        hmm_state = definition.states[state]
        return hmm_state.selfloop_pdf if is_selfloop else hmm_state.forward_pdf

    def lookup(self, pdf: int) -> tuple[UnitKind, int, bool]:
        """Reverse of :meth:`pdf_of`: pdf-id -> (unit, state, is_selfloop)."""
        if not 0 <= pdf < self.pdf_count:
            raise TopologyIndexError(f"pdf-id {pdf} out of range", unit=None, state=pdf)
        for unit in self.units:
            for index, hmm_state in enumerate(unit.states):
                if hmm_state.forward_pdf == pdf:
                    return unit.kind, index, False
                if hmm_state.selfloop_pdf == pdf:
                    return unit.kind, index, True
        raise TopologyIndexError(f"pdf-id {pdf} not assigned", unit=None, state=pdf)

    def pdf_label(self, pdf: int) -> str:
        unit, state, loop = self.lookup(pdf)
        name = self.unit(unit).states[state].label
        return f"{name}-{'loop' if loop else 'fwd'}"

    # -----------------------------------------------------------------------
    # Serialization
    # -----------------------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "pdf_count": self.pdf_count,
            "units": [
                {
                    "kind": unit.kind.value,
                    "label": unit.label,
                    "states": [[s.forward_pdf, s.selfloop_pdf, s.label] for s in unit.states],
                }
                for unit in self.units
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> HmmTopology:
        units = tuple(
            UnitDef(
                kind=UnitKind(u["kind"]),
                label=str(u["label"]),
                states=tuple(HmmState(int(f), int(s), str(lbl)) for f, s, lbl in u["states"]),
            )
            for u in data["units"]
        )
        topology = cls(DatasetKind.parse(data["kind"]), units, int(data["pdf_count"]))
        _check_pdf_table(topology)
        return topology


def build_topology(kind: DatasetKind | str) -> HmmTopology:
    """Build the manually specified topology for a dataset kind.

    Snips: WakeWord(4) + Speech(4) + Silence(1), 18 pdf-ids.
    Fluency: WakeWord(5) + Speech(5) + Silence(1), 22 pdf-ids.
    """
    kind = DatasetKind.parse(kind)
    n = kind.ww_states
    layout = [
        (UnitKind.WAKE_WORD, "wakeword", kind.ww_labels),
        (UnitKind.SPEECH, "speech", tuple(f"sp{i}" for i in range(n))),
        (UnitKind.SILENCE, "silence", ("sil",)),
    ]
    units = []
    next_pdf = 0
    for unit_kind, label, state_labels in layout:
        states = []
        for state_label in state_labels:
            states.append(HmmState(next_pdf, next_pdf + 1, state_label))
            next_pdf += 2
        units.append(UnitDef(unit_kind, label, tuple(states)))
    topology = HmmTopology(kind, tuple(units), next_pdf)
    _check_pdf_table(topology)
    return topology


def pdf_of(topology: HmmTopology, unit: UnitKind | str, state: int, is_selfloop: bool) -> int:
    return topology.pdf_of(unit, state, is_selfloop)


def _check_pdf_table(topology: HmmTopology) -> None:
    ids = [pdf for u in topology.units for s in u.states for pdf in (s.forward_pdf, s.selfloop_pdf)]
    if sorted(ids) != list(range(topology.pdf_count)):
        raise TopologyIndexError("pdf-ids must be contiguous and unique", unit=None)
    silence = [u for u in topology.units if u.kind is UnitKind.SILENCE]
    if len(silence) != 1 or silence[0].num_states != 1:
        raise TopologyIndexError("Silence must be a single 1-state unit", unit=UnitKind.SILENCE)
