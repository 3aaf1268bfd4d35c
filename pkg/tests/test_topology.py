"""Tests for HMM topologies (REQ-FUNC-TOP-001/002)."""

import itertools

import pytest

from core.errors import TopologyIndexError
from core.topology import DatasetKind, HmmTopology, UnitKind, build_topology, pdf_of


@pytest.mark.parametrize("kind, count", [(DatasetKind.SNIPS, 18), (DatasetKind.FLUENCY, 22)])
def test_pdf_counts(kind, count):
    """REQ-FUNC-TOP-001: Snips has 18 outputs and Fluency 22."""
    topology = build_topology(kind)
    assert topology.pdf_count == count
    assert topology.unit(UnitKind.SILENCE).num_states == 1
    assert topology.unit(UnitKind.SPEECH).num_states == topology.unit(UnitKind.WAKE_WORD).num_states


def test_build_topology_accepts_names():
    assert build_topology("Fluency").kind is DatasetKind.FLUENCY
    with pytest.raises(TopologyIndexError):
        build_topology("alexa")


@pytest.mark.parametrize("kind", list(DatasetKind))
def test_pdf_mapping_is_bijective(kind):
    """REQ-FUNC-TOP-002: Every (unit, state, loop) triple owns one distinct pdf-id."""
    topology = build_topology(kind)
    seen = {}
    for unit in topology.units:
        for state, loop in itertools.product(range(unit.num_states), (False, True)):
            pdf = pdf_of(topology, unit.kind, state, loop)
            assert pdf not in seen
            seen[pdf] = (unit.kind, state, loop)
            assert topology.lookup(pdf) == (unit.kind, state, loop)
    assert sorted(seen) == list(range(topology.pdf_count))


def test_snips_speech_owns_eight_ids():
    topology = build_topology(DatasetKind.SNIPS)
    ids = {topology.pdf_of("Speech", s, loop) for s in range(4) for loop in (False, True)}
    assert len(ids) == 8


def test_forward_and_selfloop_differ():
    topology = build_topology(DatasetKind.SNIPS)
    assert topology.pdf_of(UnitKind.WAKE_WORD, 0, False) != topology.pdf_of(
        UnitKind.WAKE_WORD, 0, True
    )


def test_out_of_range_lookups_raise():
    """REQ-FUNC-TOP-002: Bad units, states and pdf-ids raise TopologyIndexError."""
    topology = build_topology(DatasetKind.SNIPS)
    with pytest.raises(TopologyIndexError) as excinfo:
        topology.pdf_of(UnitKind.WAKE_WORD, 4, False)
    assert excinfo.value.state == 4
    with pytest.raises(TopologyIndexError):
        topology.pdf_of("Noise", 0, False)
    with pytest.raises(TopologyIndexError):
        topology.lookup(18)


def test_json_round_trip():
    topology = build_topology(DatasetKind.FLUENCY)
    assert HmmTopology.from_dict(topology.to_dict()) == topology
    assert topology.pdf_label(topology.pdf_of("WakeWord", 1, True)) == "flu-loop"
