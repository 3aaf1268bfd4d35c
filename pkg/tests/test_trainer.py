"""Tests for the training loop and losses (REQ-FUNC-TRN-001..003, REQ-FUNC-LOG-001)."""

import csv

import numpy as np
import pytest

from core.errors import FrameMismatchError, LabelRangeError, TrainingDivergedError
from core.run_logger import EPOCH_COLUMNS, EpochLogger
from core.tdnnf import Network, load_architecture
from core.trainer import (
    Example,
    FrameCrossEntropyLoss,
    MseLoss,
    Trainer,
    TrainOptions,
    mse,
)


@pytest.fixture
def toy_examples():
    rng = np.random.default_rng(0)
    examples = []
    for i in range(6):
        features = rng.normal(size=(30, 64))
        labels = rng.integers(0, 64, size=10)
        examples.append(Example(f"toy{i}", features, labels))
    return examples


def _am(seed=0):
    return Network(load_architecture("tiny-am"), seed=seed)


def _options(**kw):
    base = dict(epochs=5, learning_rate=0.05, momentum=0.5, batch_size=2, seed=3)
    base.update(kw)
    return TrainOptions(**base)


def test_training_improves_objective(toy_examples):
    """REQ-FUNC-TRN-001: Frame cross-entropy falls over the epochs on a toy problem."""
    trainer = Trainer(_am(), FrameCrossEntropyLoss(), _options())
    log = trainer.train(toy_examples)
    assert len(log.epochs) == 5
    assert log.objectives[-1] > log.objectives[0]
    assert log.steps == 15


def test_training_is_deterministic(toy_examples):
    """REQ-FUNC-TRN-001: The same seed gives the same parameters, also with workers."""
    a, b, c = _am(), _am(), _am()
    Trainer(a, FrameCrossEntropyLoss(), _options(epochs=2)).train(toy_examples)
    Trainer(b, FrameCrossEntropyLoss(), _options(epochs=2)).train(toy_examples)
    Trainer(c, FrameCrossEntropyLoss(), _options(epochs=2, workers=3)).train(toy_examples)
    assert a.digest() == b.digest() == c.digest()


def test_frozen_layers_do_not_change(toy_examples):
    """REQ-FUNC-TRN-002: Frozen layers keep their exact bytes."""
    net = _am()
    net.freeze(2)
    before_lower = net.digest(range(2))
    before_upper = net.digest(range(2, 4))
    Trainer(net, FrameCrossEntropyLoss(), _options(epochs=2)).train(toy_examples)
    assert net.digest(range(2)) == before_lower
    assert net.digest(range(2, 4)) != before_upper


class _ExplodingLoss:
    name = "explode"

    def __call__(self, example, result):
        return float("nan"), float("nan"), np.zeros_like(result.output)


def test_divergence_names_epoch_and_utterance(toy_examples):
    """REQ-FUNC-TRN-003: A NaN loss stops training with epoch and utterance id."""
    trainer = Trainer(_am(), _ExplodingLoss(), _options(shuffle=False))
    with pytest.raises(TrainingDivergedError) as excinfo:
        trainer.train(toy_examples)
    assert excinfo.value.epoch == 1
    assert excinfo.value.uid == "toy0"


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        Trainer(_am(), FrameCrossEntropyLoss(), _options()).train([])


def test_learning_rate_decays_geometrically():
    opts = TrainOptions(epochs=3, learning_rate=0.004, final_learning_rate=0.001)
    assert [round(opts.learning_rate_at(e), 6) for e in range(3)] == [0.004, 0.002, 0.001]
    assert TrainOptions(epochs=1, learning_rate=0.01).learning_rate_at(0) == 0.01


def test_cross_entropy_checks_labels():
    net = _am()
    result = net.forward(np.zeros((9, 64)))
    with pytest.raises(LabelRangeError) as excinfo:
        FrameCrossEntropyLoss()(Example("u", None, np.array([0, 1, 64])), result)
    assert excinfo.value.label == 64 and excinfo.value.limit == 64


def test_mse_hand_values():
    """REQ-FUNC-PRE-002: Identical inputs give 0; z=(1,0), z_hat=(0,0) gives 0.5."""
    z = np.array([[1.0, 0.0]])
    assert mse(z, z) == 0.0
    assert mse(z, np.zeros((1, 2))) == pytest.approx(0.5)


def test_mse_loss_frame_mismatch():
    net = Network(load_architecture("tiny-student").lower_stack(16), seed=0)
    result = net.forward(np.zeros((9, 64)))
    with pytest.raises(FrameMismatchError) as excinfo:
        MseLoss()(Example("u", None, np.zeros((4, 16))), result)
    assert (excinfo.value.teacher, excinfo.value.student) == (4, 3)


def test_epoch_logger_writes_csv(tmp_path, toy_examples):
    """REQ-FUNC-LOG-001: One CSV row per epoch with a fixed header."""
    log_path = tmp_path / "train.csv"
    epoch_logger = EpochLogger()
    epoch_logger.set_log_path(str(log_path))
    epoch_logger.start_logging()
    Trainer(_am(), FrameCrossEntropyLoss(), _options(epochs=3), epoch_logger).train(toy_examples)
    epoch_logger.stop_logging()

    with log_path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == EPOCH_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    assert float(rows[1][2]) == pytest.approx(-float(rows[1][1]))


def test_epoch_logger_without_path_is_silent():
    epoch_logger = EpochLogger()
    epoch_logger.start_logging()
    epoch_logger.log_epoch(1, 0.0, 0.0, 0.1, 1.0)
    assert not epoch_logger.is_logging
