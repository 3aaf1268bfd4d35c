"""Operating-point tuning, FNR scoring, DET curves and sweep tables."""

from __future__ import annotations

import bisect
import csv
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .decoder import (
    DEFAULT_REFRACTORY,
    MATCH_WINDOW_S,
    DecoderConfig,
    DetectionEvent,
    TriggerRule,
    completion_to_ww_end,
    decode_chunked,
    latency_report,
    measure_latency,
)
from .errors import EmptyEvalSetError, FormatError, UnmatchedEventError
from .features import FRAME_SHIFT_S
from .graphs import Graph
from .tdnnf import Network

logger = logging.getLogger(__name__)

TARGET_FP_PER_HOUR = 0.1
MAX_DET_POINTS = 200
MISSING = "X"


@dataclass
class StreamScan:
    """Per-output-frame margins of one decoded stream, replayable at any threshold."""

    uid: str
    margins: np.ndarray
    completions: np.ndarray
    duration_s: float
    ref_ww_end_s: float | None = None
    subsample: int = 3

    def candidates(self) -> np.ndarray:
        """Margins of frames where some token recently completed the wake word."""
        return self.margins[np.isfinite(self.margins)]

    def events(self, threshold: float, refractory_frames: int = DEFAULT_REFRACTORY
               ) -> list[DetectionEvent]:
        """The events a decoder with this threshold emits on the stream."""
        rule = TriggerRule(threshold, refractory_frames)
        out = []
        for t in np.flatnonzero(np.isfinite(self.margins)):
            margin = float(self.margins[t])
            completion = int(self.completions[t])
            if rule.fires(int(t), margin, completion):
                out.append(
                    DetectionEvent(
                        trigger_time_s=self.subsample * int(t) * FRAME_SHIFT_S,
                        score_margin=margin,
                        ww_end_estimate_s=completion_to_ww_end(completion, self.subsample),
                        frame=int(t),
                        completion_frame=completion,
                    )
                )
        return out

    def detection_score(self, window_s: float = MATCH_WINDOW_S) -> float:
        """Best margin among frames whose completion puts the wake-word end near the reference."""
        if self.ref_ww_end_s is None:
            return -math.inf
        best = -math.inf
        for t in np.flatnonzero(np.isfinite(self.margins)):
            end = completion_to_ww_end(int(self.completions[t]), self.subsample)
            if abs(end - self.ref_ww_end_s) <= window_s + 1e-9:
                best = max(best, float(self.margins[t]))
        return best


def scan_stream(
    net: Network,
    graph: Graph,
    features: np.ndarray,
    config: DecoderConfig | None = None,
    *,
    uid: str = "stream",
    ref_ww_end_s: float | None = None,
) -> StreamScan:
    config = config or DecoderConfig()
    decoder = decode_chunked(net, graph, features, config)
    state = decoder.state
    return StreamScan(
        uid=uid,
        margins=np.asarray(state.margins, dtype=np.float64),
        completions=np.asarray(state.margin_completions, dtype=np.int64),
        duration_s=len(features) * FRAME_SHIFT_S,
        ref_ww_end_s=ref_ww_end_s,
        subsample=net.config.subsample,
    )


def scan_corpus(
    net: Network,
    graph: Graph,
    items: Sequence[tuple[str, np.ndarray, float | None]],
    config: DecoderConfig | None = None,
    workers: int = 1,
) -> list[StreamScan]:
    """Scan ``(uid, features, ref_ww_end_s)`` items; results keep the input order."""

    def one(item: tuple[str, np.ndarray, float | None]) -> StreamScan:
        uid, features, ref = item
        return scan_stream(net, graph, features, config, uid=uid, ref_ww_end_s=ref)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def total_hours(scans: Iterable[StreamScan]) -> float:
    return sum(scan.duration_s for scan in scans) / 3600.0


def count_events(
    scans: Iterable[StreamScan], threshold: float, refractory_frames: int = DEFAULT_REFRACTORY
) -> int:
    return sum(len(scan.events(threshold, refractory_frames)) for scan in scans)


# ---------------------------------------------------------------------------
# Threshold tuning
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    allowed: int
    false_positives: int
    hours: float


def allowed_false_positives(hours: float, target_fph: float = TARGET_FP_PER_HOUR) -> int:
    # Round before flooring so that e.g. 10 h x 0.1 gives 1, not 0.
    return math.floor(round(hours * target_fph, 9))


def tune_threshold(
    scans: Sequence[StreamScan],
    *,
    hours: float | None = None,
    target_fph: float = TARGET_FP_PER_HOUR,
    refractory_frames: int = DEFAULT_REFRACTORY,
) -> OperatingPoint:
    """Smallest threshold whose events on negative audio stay within the FP budget.

    Args:
        scans: Decoded negative dev streams.
        hours: Audio duration to budget for; defaults to the scans' total.

    Raises:
        EmptyEvalSetError: If there is no negative audio.
    """
    hours = total_hours(scans) if hours is None else hours
    if hours <= 0.0:
        raise EmptyEvalSetError("threshold tuning needs negative audio (H = 0)")
    allowed = allowed_false_positives(hours, target_fph)
    candidates = np.unique(np.concatenate([s.candidates() for s in scans] or [np.zeros(0)]))
    if candidates.size == 0:
        logger.warning("no detections on %.2f h of negative audio; threshold is -inf", hours)
        return OperatingPoint(-math.inf, allowed, 0, hours)

    # Event counts are non-increasing in the threshold, so bisect the candidate margins.
    def too_many(index: int) -> bool:
        return count_events(scans, float(candidates[index]), refractory_frames) > allowed

    index = bisect.bisect_left(range(len(candidates)), True, key=lambda i: not too_many(i))
    if index == len(candidates):
        threshold = float(np.nextafter(candidates[-1], np.inf))
    else:
        threshold = float(candidates[index])
    false_positives = count_events(scans, threshold, refractory_frames)
    logger.info("tuned threshold %.4f: %d false positives on %.2f h (allowed %d)",
                threshold, false_positives, hours, allowed)
    return OperatingPoint(threshold, allowed, false_positives, hours)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------
@dataclass
class EvalReport:
    fnr_percent: float
    threshold: float
    n: int | str
    positives: int
    missed: int
    false_positives: int
    negative_hours: float
    det_points: list[tuple[float, float]] = field(default_factory=list)
    latency_p90_s: float | None = None
    lookahead_s: float = 0.0
    fnr_concat_percent: float | None = None
    model: str = ""

    @property
    def latency_label(self) -> str:
        if self.latency_p90_s is None:
            return MISSING
        return f"{self.latency_p90_s:.2f}+{self.lookahead_s:.2f} s"

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["threshold"] = _encode_float(self.threshold)
        data["det_points"] = [list(p) for p in self.det_points]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        values = dict(data)
        values["threshold"] = _decode_float(values["threshold"])
        values["det_points"] = [tuple(p) for p in values.get("det_points", [])]
        try:
            return cls(**values)
        except TypeError as e:
            raise FormatError(f"bad report fields: {e}", "<report>") from e


def _encode_float(value: float) -> float | str:
    return value if math.isfinite(value) else ("inf" if value > 0 else "-inf")


def _decode_float(value: float | str) -> float:
    return float(value)


def fnr_percent(missed: int, total: int) -> float:
    if total == 0:
        raise EmptyEvalSetError("no positive utterances to score")
    return 100.0 * missed / total


def det_curve(
    positive_scores: Sequence[float],
    negatives: Sequence[StreamScan],
    hours: float,
    refractory_frames: int = DEFAULT_REFRACTORY,
    max_points: int = MAX_DET_POINTS,
    include: Iterable[float] = (),
) -> list[tuple[float, float]]:
    """``(fp_per_hour, fnr_percent)`` points, ordered by increasing false-positive rate."""
    scores = np.asarray(positive_scores, dtype=np.float64)
    pool = np.concatenate(
        [scores[np.isfinite(scores)], *[s.candidates() for s in negatives], np.zeros(0)]
    )
    grid = np.unique(pool)
    if grid.size > max_points:
        grid = np.unique(np.quantile(grid, np.linspace(0.0, 1.0, max_points)))
    grid = np.unique(np.concatenate([grid, [t for t in include if math.isfinite(t)]]))
    points = []
    for threshold in grid[::-1]:
        fp = count_events(negatives, float(threshold), refractory_frames)
        missed = int(np.sum(~(scores >= threshold)))
        points.append((fp / hours if hours > 0 else 0.0, fnr_percent(missed, len(scores))))
    return points


def score(
    positives: Sequence[StreamScan],
    negatives: Sequence[StreamScan],
    threshold: float,
    *,
    right_context: int,
    n: int | str = "all",
    refractory_frames: int = DEFAULT_REFRACTORY,
    model: str = "",
) -> EvalReport:
    """FNR of ``positives`` and FP/h of ``negatives`` at ``threshold``.

    A positive counts as detected when some frame whose completion places the
    wake-word end within 0.5 s of the reference reaches the threshold. This is a
    per-frame margin test, whereas false positives count emitted events under
    the refractory rule, so the two rates use different event definitions.

    Raises:
        EmptyEvalSetError: If there are no positives.
    """
    if not positives:
        raise EmptyEvalSetError("eval set has no positive utterances")
    scores = [scan.detection_score() for scan in positives]
    missed = sum(1 for s in scores if not s >= threshold)
    hours = total_hours(negatives)
    false_positives = count_events(negatives, threshold, refractory_frames)

    latencies = []
    for scan in positives:
        if scan.ref_ww_end_s is None:
            continue
        try:
            latency = measure_latency(scan.events(threshold, refractory_frames),
                                      scan.ref_ww_end_s, right_context)
        except UnmatchedEventError:
            continue
        latencies.append(latency.decode_s)
    latency = latency_report(latencies, right_context)

    report = EvalReport(
        fnr_percent=fnr_percent(missed, len(positives)),
        threshold=threshold,
        n=n,
        positives=len(positives),
        missed=missed,
        false_positives=false_positives,
        negative_hours=hours,
        det_points=det_curve(scores, negatives, hours, refractory_frames, include=[threshold]),
        latency_p90_s=latency.p90,
        lookahead_s=latency.lookahead_s,
        model=model,
    )
    logger.info("FNR %.2f%% (%d/%d missed), %d FP on %.2f h, latency %s",
                report.fnr_percent, missed, len(positives), false_positives, hours,
                report.latency_label)
    return report


def write_report(path: str | Path, report: EvalReport) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | Path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def write_det_csv(path: str | Path, points: Iterable[tuple[float, float]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fp_per_hour", "fnr_percent"])
        for fp, fnr in points:
            writer.writerow([f"{fp:.6f}", f"{fnr:.4f}"])


# ---------------------------------------------------------------------------
# Sweep tables
# ---------------------------------------------------------------------------
@dataclass
class SweepGrid:
    """FNR cells over methods x training-set sizes; absent cells render as ``X``."""

    sizes: list[str]
    methods: list[str]
    cells: dict[str, dict[str, EvalReport]] = field(default_factory=dict)
    models: dict[str, str] = field(default_factory=dict)

    def put(self, method: str, size: int | str, report: EvalReport) -> None:
        self.cells.setdefault(method, {})[str(size)] = report

    def get(self, method: str, size: int | str) -> EvalReport | None:
        return self.cells.get(method, {}).get(str(size))

    def missing(self) -> list[tuple[str, str]]:
        return [(m, s) for m in self.methods for s in self.sizes if self.get(m, s) is None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sizes": self.sizes,
            "methods": self.methods,
            "models": self.models,
            "cells": {m: {s: r.to_dict() for s, r in row.items()} for m, row in self.cells.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SweepGrid:
        grid = cls([str(s) for s in data["sizes"]], list(data["methods"]),
                   models=dict(data.get("models", {})))
        for method, row in data.get("cells", {}).items():
            for size, report in row.items():
                grid.put(method, size, EvalReport.from_dict(report))
        return grid


def render_table(grid: SweepGrid, title: str = "FNR% at 0.1 FP/h") -> str:
    """Plain-text table: one row per method, one FNR column per size, then p90 latency."""
    header = ["Method", *[f"n={s}" for s in grid.sizes], "Latency 90%"]
    rows = []
    for method in grid.methods:
        label = f"{method} {grid.models[method]}" if method in grid.models else method
        cells = []
        latency = MISSING
        for size in grid.sizes:
            report = grid.get(method, size)
            cells.append(MISSING if report is None else f"{report.fnr_percent:.2f}")
            if report is not None and report.latency_p90_s is not None:
                latency = report.latency_label
        rows.append([label, *cells, latency])
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]

    def line(values: list[str]) -> str:
        first = values[0].ljust(widths[0])
        rest = [v.rjust(w) for v, w in zip(values[1:], widths[1:], strict=True)]
        return "  ".join([first, *rest])

    rule = "-" * len(line(header))
    return "\n".join([title, rule, line(header), rule, *[line(r) for r in rows], rule]) + "\n"
