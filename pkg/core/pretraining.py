"""Multi-stage pipelines: acoustic-model pretraining, transfer, distillation, fine-tuning."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .augment import AugmentSpec
from .config import AugmentConfig
from .dataset import features_of, senone_examples, student_view
from .errors import ArchitectureMismatchError, FormatError, ShapeMismatchError
from .features import BOTTLENECK_MAGIC, read_matrix, write_matrix
from .graphs import Graph
from .run_logger import EpochLogger
from .synth import NUM_SENONES, SynthUtterance
from .tdnnf import Network, NetworkConfig, layer_dims
from .trainer import (
    Example,
    FrameCrossEntropyLoss,
    LfmmiLoss,
    MseLoss,
    Trainer,
    TrainingLog,
    TrainOptions,
)

logger = logging.getLogger(__name__)

TRANSFER_LAYERS = 6


@dataclass(frozen=True)
class AmTask:
    """Frame-level senone classification used to pretrain acoustic models."""

    num_senones: int = NUM_SENONES
    subsample: int = 3

    def examples(self, corpus: Sequence[SynthUtterance]) -> list[Example]:
        return senone_examples(corpus, self.subsample)


def frame_accuracy(net: Network, examples: Sequence[Example]) -> float:
    correct = 0
    total = 0
    for example in examples:
        predicted = np.argmax(net.forward(example.features).output, axis=1)
        correct += int(np.sum(predicted == example.target))
        total += len(example.target)
    return correct / total if total else 0.0


def pretrain_am(
    config: NetworkConfig,
    examples: Sequence[Example],
    options: TrainOptions,
    *,
    task: AmTask | None = None,
    epoch_logger: EpochLogger | None = None,
) -> tuple[Network, TrainingLog]:
    """Train a senone classifier with frame cross-entropy."""
    task = task or AmTask()
    net = Network(config.with_output_dim(task.num_senones), seed=options.seed)
    trainer = Trainer(net, FrameCrossEntropyLoss(), options, epoch_logger)
    log = trainer.train(examples)
    logger.info("acoustic model %s: %d params, frame accuracy %.3f", config.name,
                net.num_params, frame_accuracy(net, examples))
    return net, log


def _check_transferable(source: Network, target_config: NetworkConfig, num_layers: int) -> None:
    if num_layers > len(source.config.layers) - 1 or num_layers > len(target_config.layers) - 1:
        raise ArchitectureMismatchError(
            f"cannot transfer {num_layers} layers from a {len(source.config.layers)}-layer "
            f"{source.config.name} into {target_config.name}",
            layer=num_layers,
        )
    src_dims = layer_dims(source.config)
    dst_dims = layer_dims(target_config)
    if source.config.input_dim != target_config.input_dim:
        raise ArchitectureMismatchError("input dims differ", layer=0)
    for i in range(num_layers):
        if source.config.layers[i] != target_config.layers[i] or src_dims[i] != dst_dims[i]:
            raise ArchitectureMismatchError(
                f"layer {i} of {source.config.name} does not match {target_config.name}", layer=i
            )


def copy_lower_layers(source: Network, target: Network, num_layers: int) -> None:
    _check_transferable(source, target.config, num_layers)
    for i in range(num_layers):
        for name, value in source.layer_params(i).items():
            target.params[name] = value.astype(target.dtype, copy=True)


def transfer_init(
    am: Network, student_config: NetworkConfig, num_layers: int = TRANSFER_LAYERS, seed: int = 0
) -> Network:
    """A student whose first ``num_layers`` layers are copied from ``am`` and frozen.

    Raises:
        ArchitectureMismatchError: If the AM is too shallow or a layer differs.
    """
    student = Network(student_config, seed=seed, dtype=am.dtype)
    copy_lower_layers(am, student, num_layers)
    student.freeze(num_layers)
    logger.info("transferred %d layers from %s (digest %s)", num_layers, am.config.name,
                student.digest(range(num_layers))[:12])
    return student


# ---------------------------------------------------------------------------
# Teacher-student distillation
# ---------------------------------------------------------------------------
@dataclass
class DistillBatch:
    """Teacher and student inputs derived from one source utterance."""

    uid: str
    teacher_features: np.ndarray
    student_features: np.ndarray
    provenance: dict[str, Any] = field(default_factory=dict)

    @property
    def element_count(self) -> int:
        """N for the MSE mean, once the teacher output width is known."""
        return int(self.provenance.get("elements", 0))


def make_distill_batches(
    corpus: Sequence[SynthUtterance],
    *,
    asymmetric: bool = True,
    seed: int = 0,
    augment: AugmentConfig | None = None,
) -> list[DistillBatch]:
    """Pair clean teacher input with augmented student input (asymmetric), or feed
    both networks the same augmented features (symmetric)."""
    batches = []
    for utt in corpus:
        noisy, spec = student_view(utt, seed, augment)
        noisy_features = features_of(noisy)
        teacher_features = features_of(utt) if asymmetric else noisy_features
        batches.append(
            DistillBatch(
                uid=utt.uid,
                teacher_features=teacher_features,
                student_features=noisy_features,
                provenance={
                    "source": utt.uid,
                    "teacher_input": "clean" if asymmetric else "augmented",
                    "student_input": "augmented",
                    "augment": _spec_tag(spec),
                },
            )
        )
    return batches


def _spec_tag(spec: AugmentSpec) -> dict[str, Any]:
    return {
        "speed_factor": spec.speed_factor,
        "noise_snr_db": spec.noise_snr_db,
        "reverb_decay_s": spec.reverb_decay_s,
        "seed": spec.seed,
    }


def teacher_targets(
    teacher: Network,
    batches: Sequence[DistillBatch],
    *,
    cache_dir: str | Path | None = None,
    workers: int = 1,
) -> list[np.ndarray]:
    """Teacher bottleneck z for every batch, read from or written to the cache."""
    if teacher.config.bottleneck_layer is None:
        raise ArchitectureMismatchError(f"{teacher.config.name} declares no bottleneck layer")
    cache = None if cache_dir is None else Path(cache_dir)

    def target(batch: DistillBatch) -> np.ndarray:
        path = None if cache is None else cache / f"{batch.uid}.bnf"
        if path is not None and path.is_file():
            try:
                return read_matrix(path, BOTTLENECK_MAGIC)
            except FormatError:
                logger.warning("ignoring unreadable cache entry %s", path)
        z = teacher.forward(batch.teacher_features, capture=True).taps["bottleneck"]
        if path is not None:
            write_matrix(path, BOTTLENECK_MAGIC, z)
        return z.astype(np.float64)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(target, batches))
    return [target(b) for b in batches]


def distill(
    teacher: Network,
    student_config: NetworkConfig,
    batches: Sequence[DistillBatch],
    options: TrainOptions,
    *,
    cache_dir: str | Path | None = None,
    epoch_logger: EpochLogger | None = None,
) -> tuple[Network, TrainingLog]:
    """Regress the student's lower stack (plus a linear head) onto the teacher bottleneck.

    Returns the lower-stack network, whose last layer is the head.

    Raises:
        FrameMismatchError: If teacher and student frame counts differ.
    """
    assert teacher.config.bottleneck_layer is not None
    width = teacher.config.layers[teacher.config.bottleneck_layer].bottleneck
    assert width is not None
    lower = Network(student_config.lower_stack(width), seed=options.seed)
    targets = teacher_targets(teacher, batches, cache_dir=cache_dir, workers=options.workers)
    examples = []
    for batch, z in zip(batches, targets, strict=True):
        batch.provenance["elements"] = int(z.size)
        examples.append(Example(batch.uid, batch.student_features, z))
    trainer = Trainer(lower, MseLoss(), options, epoch_logger)
    log = trainer.train(examples)
    return lower, log


def distill_mse(lower: Network, teacher: Network, batches: Sequence[DistillBatch]) -> float:
    """Mean MSE of a lower stack against the teacher over ``batches``."""
    targets = teacher_targets(teacher, batches)
    trainer = Trainer(lower, MseLoss(), TrainOptions(epochs=0))
    examples = [
        Example(b.uid, b.student_features, z) for b, z in zip(batches, targets, strict=True)
    ]
    return trainer.evaluate(examples)[1]


def finetune_wakeword(
    lower: Network,
    student_config: NetworkConfig,
    examples: Sequence[Example],
    denominator: Graph,
    options: TrainOptions,
    *,
    unfreeze: bool = False,
    epoch_logger: EpochLogger | None = None,
) -> tuple[Network, TrainingLog]:
    """Add the upper layers on top of a pretrained lower stack and train with LF-MMI.

    The lower stack stays frozen unless ``unfreeze`` is set.

    Raises:
        ShapeMismatchError: If the output layer does not match the denominator's pdf count.
    """
    config = student_config.with_output_dim(denominator.pdf_count)
    if config.output_dim != denominator.pdf_count:
        raise ShapeMismatchError("student output does not match the topology",
                                 denominator.pdf_count, config.output_dim)
    num_layers = student_config.lower_layers
    student = Network(config, seed=options.seed, dtype=lower.dtype)
    copy_lower_layers(lower, student, num_layers)
    if not unfreeze:
        student.freeze(num_layers)
    if options.epochs == 0 or not examples:
        return student, TrainingLog()
    trainer = Trainer(student, LfmmiLoss(denominator), options, epoch_logger)
    return student, trainer.train(examples)
