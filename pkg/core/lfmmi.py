"""LF-MMI objective and gradient by log-semiring forward-backward.

The trellis is unrolled over the T output frames: a state at step t reaches
step t + 1 through its arcs, each arc emitting frame t. Numerator lattices
only use the arcs of their own layer at each step. All arithmetic is in
float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    EmptyDenominatorError,
    EmptyNumeratorError,
    GraphError,
    NoAcceptedPathError,
    NonFiniteError,
    ShapeMismatchError,
)
from .graphs import Graph, NumeratorLattice

logger = logging.getLogger(__name__)


@dataclass
class LossResult:
    objective: float
    grad: np.ndarray

    @property
    def num_frames(self) -> int:
        return int(self.grad.shape[0])


def segment_logsumexp(values: np.ndarray, segments: np.ndarray, size: int) -> np.ndarray:
    """Log-sum-exp of ``values`` grouped by ``segments`` into ``size`` bins.

    Empty bins, and bins holding only -inf, come out as -inf.
    """
    peak = np.full(size, -np.inf)
    np.maximum.at(peak, segments, values)
    shift = np.where(np.isfinite(peak), peak, 0.0)
    total = np.bincount(segments, weights=np.exp(values - shift[segments]), minlength=size)
    with np.errstate(divide="ignore"):
        return np.log(total) + shift


def _check_inputs(graph: Graph, logp: np.ndarray) -> np.ndarray:
    logp = np.asarray(logp, dtype=np.float64)
    if logp.ndim != 2 or logp.shape[1] != graph.pdf_count:
        raise ShapeMismatchError(
            f"expected T x {graph.pdf_count} log-probabilities, got {logp.shape}",
            expected=graph.pdf_count,
            actual=logp.shape,
        )
    if not np.all(np.isfinite(logp)):
        raise NonFiniteError("log-probabilities contain NaN or inf", what="logp")
    if graph.has_epsilon:
        raise GraphError(f"{graph.role}: forward-backward needs an epsilon-free graph")
    if isinstance(graph, NumeratorLattice) and graph.num_frames != logp.shape[0]:
        raise ShapeMismatchError(
            f"lattice spans {graph.num_frames} frames, got {logp.shape[0]}",
            expected=graph.num_frames,
            actual=logp.shape[0],
        )
    return logp


def _no_path(graph: Graph, num_frames: int) -> NoAcceptedPathError:
    message = f"{graph.role} graph accepts no path of {num_frames} frames"
    if graph.role == "numerator":
        return EmptyNumeratorError(message)
    if graph.role == "denominator":
        return EmptyDenominatorError(message)
    return NoAcceptedPathError(message, role=graph.role)


def forward_backward(graph: Graph, logp: np.ndarray) -> tuple[float, np.ndarray]:
    """Total log-score of all T-arc paths and the per-frame pdf occupancies.

    Args:
        graph: Epsilon-free graph; a :class:`NumeratorLattice` must span T frames.
        logp: T x pdf_count matrix of log network outputs. Rows need not be
            normalized.

    Returns:
        ``(log_z, occupancy)`` where ``occupancy[t, p]`` is the posterior
        probability that frame t is explained by pdf p. Rows sum to 1.

    Raises:
        EmptyNumeratorError: A numerator accepts no path of length T.
        EmptyDenominatorError: A denominator accepts no path of length T.
    """
    logp = _check_inputs(graph, logp)
    num_frames, pdf_count = logp.shape
    n = graph.num_states
    if isinstance(graph, NumeratorLattice):
        frame_arcs = graph.arcs_by_frame()
    else:
        every = np.arange(graph.num_arcs)
        frame_arcs = [every] * num_frames

    src, dst, label, weight = graph.src, graph.dst, graph.label, graph.weight
    emit = [weight[a] + logp[t, label[a]] for t, a in enumerate(frame_arcs)]

    alpha = np.full((num_frames + 1, n), -np.inf)
    alpha[0, graph.start] = 0.0
    for t, arcs in enumerate(frame_arcs):
        alpha[t + 1] = segment_logsumexp(alpha[t, src[arcs]] + emit[t], dst[arcs], n)

    with np.errstate(divide="ignore"):
        log_z = float(logsumexp(alpha[num_frames] + graph.final_weights))
    if not np.isfinite(log_z):
        raise _no_path(graph, num_frames)

    beta = np.full((num_frames + 1, n), -np.inf)
    beta[num_frames] = graph.final_weights
    occupancy = np.zeros((num_frames, pdf_count))
    for t in range(num_frames - 1, -1, -1):
        arcs = frame_arcs[t]
        through = emit[t] + beta[t + 1, dst[arcs]]
        beta[t] = segment_logsumexp(through, src[arcs], n)
        posterior = np.exp(alpha[t, src[arcs]] + through - log_z)
        occupancy[t] = np.bincount(label[arcs], weights=posterior, minlength=pdf_count)
    return log_z, occupancy


def lfmmi(num: Graph, den: Graph, logp: np.ndarray) -> LossResult:
    """Per-utterance LF-MMI objective ``log Z_num - log Z_den`` and its gradient.

    ``grad[t, p]`` is the derivative of the objective with respect to
    ``logp[t, p]``: numerator occupancy minus denominator occupancy.
    """
    if num.pdf_count != den.pdf_count:
        raise ShapeMismatchError(
            "numerator and denominator disagree on pdf_count",
            expected=den.pdf_count,
            actual=num.pdf_count,
        )
    log_num, occ_num = forward_backward(num, logp)
    log_den, occ_den = forward_backward(den, logp)
    objective = log_num - log_den
    if objective > 1e-6:
        logger.debug("numerator mass exceeds denominator mass by %.3g", objective)
    return LossResult(objective, occ_num - occ_den)
