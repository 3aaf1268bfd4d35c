"""Minibatch SGD training loop with pluggable per-utterance losses."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .errors import FrameMismatchError, LabelRangeError, ShapeMismatchError, TrainingDivergedError
from .graphs import Graph
from .lfmmi import lfmmi
from .run_logger import EpochLogger
from .tdnnf import ForwardResult, Network
from .utils import derive_rng

logger = logging.getLogger(__name__)


@dataclass
class Example:
    """One training utterance: input features and a loss-specific target."""

    uid: str
    features: np.ndarray
    target: Any


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 4
    learning_rate: float = 0.002
    final_learning_rate: float | None = None
    momentum: float = 0.9
    batch_size: int = 8
    semiorth_interval: int = 4
    grad_clip: float | None = 10.0
    seed: int = 0
    workers: int = 1
    shuffle: bool = True

    def learning_rate_at(self, epoch: int) -> float:
        """Exponential decay from ``learning_rate`` to ``final_learning_rate`` over the epochs."""
        final = self.learning_rate if self.final_learning_rate is None else self.final_learning_rate
        if self.learning_rate <= 0.0 or final <= 0.0 or self.epochs <= 1:
            return self.learning_rate if epoch == 0 or self.epochs <= 1 else final
        ratio = final / self.learning_rate
        return self.learning_rate * ratio ** (epoch / (self.epochs - 1))


class Loss(Protocol):
    name: str

    def __call__(self, example: Example, result: ForwardResult) -> tuple[float, float, np.ndarray]:
        """Return ``(objective, loss, d loss / d output)`` for one utterance."""
        ...


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
class LfmmiLoss:
    """Negative LF-MMI objective per output frame; the target is a numerator graph."""

    name = "lfmmi"

    def __init__(self, denominator: Graph):
        self.denominator = denominator

    def __call__(self, example: Example, result: ForwardResult) -> tuple[float, float, np.ndarray]:
        numerator: Graph = example.target
        logp = result.output.astype(np.float64)
        frames = max(1, logp.shape[0])
        outcome = lfmmi(numerator, self.denominator, logp)
        return outcome.objective / frames, -outcome.objective / frames, -outcome.grad / frames


class FrameCrossEntropyLoss:
    """Mean frame cross-entropy; the target is an int array of class ids per output frame."""

    name = "xent"

    def __call__(self, example: Example, result: ForwardResult) -> tuple[float, float, np.ndarray]:
        logp = result.output.astype(np.float64)
        labels = np.asarray(example.target, dtype=np.int64)
        if labels.shape != (logp.shape[0],):
            raise ShapeMismatchError(
                f"{example.uid}: {labels.shape[0]} labels for {logp.shape[0]} frames",
                expected=logp.shape[0], actual=labels.shape[0],
            )
        if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[1]):
            bad = int(labels.max() if labels.max() >= logp.shape[1] else labels.min())
            raise LabelRangeError(f"{example.uid}: label {bad} out of range", bad, logp.shape[1])
        rows = np.arange(len(labels))
        frames = max(1, len(labels))
        loss = -float(np.sum(logp[rows, labels])) / frames
        grad = np.zeros_like(logp)
        grad[rows, labels] = -1.0 / frames
        return -loss, loss, grad


def mse(target: np.ndarray, prediction: np.ndarray) -> float:
    """Mean squared error over all N = frames x dims elements."""
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise ShapeMismatchError("MSE operands differ in shape", target.shape, prediction.shape)
    if target.size == 0:
        return 0.0
    return float(np.mean((target - prediction) ** 2))


class MseLoss:
    """Bottleneck regression: the target is the teacher representation at the output rows."""

    name = "mse"

    def __call__(self, example: Example, result: ForwardResult) -> tuple[float, float, np.ndarray]:
        target = np.asarray(example.target, dtype=np.float64)
        prediction = result.output.astype(np.float64)
        if target.shape[0] != prediction.shape[0]:
            raise FrameMismatchError(
                f"{example.uid}: teacher gives {target.shape[0]} frames, "
                f"student {prediction.shape[0]}",
                example.uid, target.shape[0], prediction.shape[0],
            )
        loss = mse(target, prediction)
        grad = 2.0 * (prediction - target) / max(1, target.size)
        return -loss, loss, grad


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------
@dataclass
class EpochStats:
    epoch: int
    objective: float
    loss: float
    learning_rate: float
    seconds: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    steps: int = 0

    @property
    def objectives(self) -> list[float]:
        return [e.objective for e in self.epochs]


class Trainer:
    """SGD with momentum over whole utterances.

    Gradients of a minibatch are averaged over utterances. With several
    workers the per-utterance passes run in a thread pool; results are
    summed in example order.
    """

    def __init__(
        self,
        net: Network,
        loss: Loss,
        options: TrainOptions,
        epoch_logger: EpochLogger | None = None,
    ):
        self.net = net
        self.loss = loss
        self.options = options
        self.epoch_logger = epoch_logger
        self.step = 0
        self.velocity: dict[str, np.ndarray] = {}

    def _evaluate(self, example: Example) -> tuple[float, float, dict[str, np.ndarray]]:
        result = self.net.forward(example.features)
        objective, loss, grad = self.loss(example, result)
        return objective, loss, self.net.backward(result, grad)

    def evaluate(self, examples: Sequence[Example]) -> tuple[float, float]:
        """Mean (objective, loss) over ``examples`` without updating anything."""
        if not examples:
            return 0.0, 0.0
        scores = [self.loss(e, self.net.forward(e.features))[:2] for e in examples]
        return float(np.mean([s[0] for s in scores])), float(np.mean([s[1] for s in scores]))

    def train(self, examples: Sequence[Example]) -> TrainingLog:
        """Run ``options.epochs`` epochs over ``examples``.

        Raises:
            ValueError: If ``examples`` is empty.
            TrainingDivergedError: If a loss or gradient becomes NaN or infinite.
        """
        if not examples:
            raise ValueError("cannot train on an empty corpus")
        opts = self.options
        log = TrainingLog()
        rng = derive_rng(opts.seed, "shuffle")
        pool = ThreadPoolExecutor(max_workers=opts.workers) if opts.workers > 1 else None
        try:
            for epoch in range(opts.epochs):
                lr = opts.learning_rate_at(epoch)
                started = time.perf_counter()
                order = rng.permutation(len(examples)) if opts.shuffle else np.arange(len(examples))
                objectives: list[float] = []
                losses: list[float] = []
                for first in range(0, len(order), opts.batch_size):
                    batch = [examples[i] for i in order[first : first + opts.batch_size]]
                    if pool is None:
                        outcomes = [self._evaluate(e) for e in batch]
                    else:
                        outcomes = list(pool.map(self._evaluate, batch))
                    total: dict[str, np.ndarray] = {}
                    for example, (objective, loss, grads) in zip(batch, outcomes, strict=True):
                        if not math.isfinite(loss):
                            raise TrainingDivergedError(
                                f"loss became {loss} on {example.uid} in epoch {epoch + 1}",
                                epoch + 1, example.uid,
                            )
                        objectives.append(objective)
                        losses.append(loss)
                        for name, g in grads.items():
                            total[name] = total[name] + g if name in total else g.copy()
                    self._update(total, len(batch), lr, epoch, batch[-1].uid)
                stats = EpochStats(
                    epoch + 1,
                    float(np.mean(objectives)),
                    float(np.mean(losses)),
                    lr,
                    time.perf_counter() - started,
                )
                log.epochs.append(stats)
                logger.info(
                    "%s epoch %d/%d: objective %.5f loss %.5f lr %.3g (%.1fs)",
                    self.loss.name, stats.epoch, opts.epochs, stats.objective, stats.loss,
                    lr, stats.seconds,
                )
                if self.epoch_logger is not None:
                    self.epoch_logger.log_epoch(
                        stats.epoch, stats.objective, stats.loss, lr, stats.seconds
                    )
        finally:
            if pool is not None:
                pool.shutdown()
        log.steps = self.step
        return log

    def _update(
        self, grads: dict[str, np.ndarray], count: int, lr: float, epoch: int, uid: str
    ) -> None:
        opts = self.options
        scale = 1.0 / count
        if opts.grad_clip is not None:
            norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
            norm *= scale
            if not math.isfinite(norm):
                raise TrainingDivergedError(
                    f"gradient became non-finite in epoch {epoch + 1}", epoch + 1, uid
                )
            if norm > opts.grad_clip:
                scale *= opts.grad_clip / norm
        params = self.net.params
        for name, g in grads.items():
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(params[name])
            v = opts.momentum * v - (lr * scale) * g
            self.velocity[name] = v.astype(params[name].dtype)
            params[name] += self.velocity[name]
        self.step += 1
        if lr > 0.0 and opts.semiorth_interval and self.step % opts.semiorth_interval == 0:
            self.net.apply_semiorth()
