"""Run configuration: JSON documents mapped onto frozen dataclasses.

Every section rejects unknown keys, and validation failures raise
:class:`~core.errors.ConfigError` naming the offending field.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from .augment import AugmentSpec, random_spec
from .errors import ConfigError, MissingArtifactError
from .topology import DatasetKind

logger = logging.getLogger(__name__)

MODES = ("e2e", "e2e+transfer", "phone-align", "phone-align+transfer", "phone-align+ts")
TRANSFER_MODES = ("e2e+transfer", "phone-align+transfer")
DEFAULT_SIZES: tuple[int | str, ...] = (100, 500, 1000, 2000, "all")

_T = TypeVar("_T")


def _build(cls: type[_T], data: Any, section: str) -> _T:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object", field=section)
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]}", field=f"{section}.{unknown[0]}")
    values = {}
    for key, value in data.items():
        values[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}", field=section) from e


def _require(condition: bool, message: str, name: str) -> None:
    if not condition:
        raise ConfigError(message, field=name)


@dataclass(frozen=True)
class CorpusConfig:
    """Synthetic corpus sizes. Eval speakers are disjoint from train/dev speakers."""

    num_positive: int = 200
    negative_hours: float = 0.5
    dev_negative_hours: float = 0.5
    eval_positive: int = 100
    eval_negative_hours: float = 0.5
    num_speakers: int = 20
    eval_speakers: int = 10
    am_utterances: int = 200

    def __post_init__(self) -> None:
        for name in ("num_positive", "eval_positive", "num_speakers", "eval_speakers",
                     "am_utterances"):
            _require(getattr(self, name) >= 0, f"{name} must be non-negative", f"corpus.{name}")
        for name in ("negative_hours", "dev_negative_hours", "eval_negative_hours"):
            _require(getattr(self, name) >= 0, f"{name} must be non-negative", f"corpus.{name}")
        _require(self.num_speakers > 0 and self.eval_speakers > 0,
                 "speaker pools must be non-empty", "corpus.num_speakers")


@dataclass(frozen=True)
class AugmentConfig:
    copies: int = 1
    snr_range_db: tuple[float, float] = (5.0, 30.0)
    reverb_probability: float = 0.5
    max_decay_s: float = 0.5
    speed: bool = True

    def __post_init__(self) -> None:
        _require(self.copies >= 0, "copies must be non-negative", "augment.copies")
        _require(len(self.snr_range_db) == 2 and self.snr_range_db[0] <= self.snr_range_db[1],
                 "snr_range_db must be [low, high]", "augment.snr_range_db")
        _require(0.0 <= self.reverb_probability <= 1.0,
                 "reverb_probability must be in [0, 1]", "augment.reverb_probability")
        _require(0.05 <= self.max_decay_s <= 1.0,
                 "max_decay_s must be in [0.05, 1]", "augment.max_decay_s")

    def draw(self, rng: np.random.Generator, allow_speed: bool = True) -> AugmentSpec:
        return random_spec(
            rng,
            snr_range_db=self.snr_range_db,
            reverb_probability=self.reverb_probability,
            max_decay_s=self.max_decay_s,
            allow_speed=allow_speed and self.speed,
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    learning_rate: float = 0.002
    final_learning_rate: float | None = 0.0005
    momentum: float = 0.9
    batch_size: int = 8
    semiorth_interval: int = 4
    grad_clip: float | None = 10.0
    tolerance: int = 2
    am_architecture: str = "am"
    am_epochs: int = 4
    teacher_architecture: str = "teacher"
    distill_epochs: int = 4
    asymmetric: bool = True
    unfreeze: bool = False

    def __post_init__(self) -> None:
        _require(self.epochs >= 0, "epochs must be non-negative", "train.epochs")
        _require(self.learning_rate >= 0, "learning_rate must be non-negative",
                 "train.learning_rate")
        _require(self.batch_size >= 1, "batch_size must be at least 1", "train.batch_size")
        _require(self.tolerance >= 0, "tolerance must be non-negative", "train.tolerance")
        _require(0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)", "train.momentum")


@dataclass(frozen=True)
class DecoderSettings:
    beam: float = 14.0
    chunk_frames: int = 160
    refractory_frames: int = 34
    block_frames: int = 32

    def __post_init__(self) -> None:
        _require(self.beam > 0, "beam must be positive", "decoder.beam")
        _require(self.chunk_frames >= 1, "chunk_frames must be at least 1",
                 "decoder.chunk_frames")
        _require(self.block_frames >= 1, "block_frames must be at least 1",
                 "decoder.block_frames")


@dataclass(frozen=True)
class EvalConfig:
    target_fph: float = 0.1
    sizes: tuple[int | str, ...] = DEFAULT_SIZES
    methods: tuple[str, ...] = ("e2e", "phone-align", "phone-align+transfer", "phone-align+ts")
    concat: bool = True

    def __post_init__(self) -> None:
        _require(self.target_fph > 0, "target_fph must be positive", "eval.target_fph")
        for size in self.sizes:
            _require(size == "all" or (isinstance(size, int) and size > 0),
                     f"bad subset size {size!r}", "eval.sizes")
        for method in self.methods:
            _require(method in MODES, f"unknown method {method!r}", "eval.methods")


@dataclass(frozen=True)
class PathsConfig:
    out: str = "runs/default"

    @property
    def root(self) -> Path:
        return Path(self.out)

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def audio(self) -> Path:
        return self.data / "audio"

    @property
    def features(self) -> Path:
        return self.data / "features"

    @property
    def graphs(self) -> Path:
        return self.data / "graphs"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def cache(self) -> Path:
        return self.root / "cache"

    def manifest(self, split: str) -> Path:
        return self.data / f"{split}.jsonl"

    def model(self, name: str) -> Path:
        return self.models / f"{name}.ckpt"


@dataclass(frozen=True)
class RunConfig:
    """One experiment: dataset kind, training mode, subset size and everything else."""

    kind: DatasetKind
    seed: int
    mode: str = "phone-align"
    n: int | str = "all"
    architecture: str | None = None
    workers: int = 1
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decoder: DecoderSettings = field(default_factory=DecoderSettings)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self) -> None:
        _require(self.mode in MODES, f"unknown mode {self.mode!r}", "mode")
        _require(self.n == "all" or (isinstance(self.n, int) and self.n > 0),
                 f"n must be a positive integer or 'all', got {self.n!r}", "n")
        _require(isinstance(self.seed, int) and 0 <= self.seed < 2**64,
                 "seed must be an unsigned 64-bit integer", "seed")
        _require(self.workers >= 1, "workers must be at least 1", "workers")

    @property
    def architecture_name(self) -> str:
        if self.architecture is not None:
            return self.architecture
        return "student-transfer" if self.mode in TRANSFER_MODES else "student"

    @property
    def run_name(self) -> str:
        return f"{self.kind.value}-{self.mode}-n{self.n}-s{self.seed}"

    def with_overrides(
        self, *, seed: int | None = None, workers: int | None = None, out: str | None = None,
        mode: str | None = None, n: int | str | None = None,
    ) -> RunConfig:
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if workers is not None:
            changes["workers"] = workers
        if mode is not None:
            changes["mode"] = mode
        if n is not None:
            changes["n"] = n
        if out is not None:
            changes["paths"] = replace(self.paths, out=out)
        return replace(self, **changes) if changes else self

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        sections = {
            "corpus": CorpusConfig,
            "augment": AugmentConfig,
            "train": TrainConfig,
            "decoder": DecoderSettings,
            "eval": EvalConfig,
            "paths": PathsConfig,
        }
        scalars = {"kind", "seed", "mode", "n", "architecture", "workers"}
        unknown = sorted(set(data) - scalars - set(sections))
        if unknown:
            raise ConfigError(f"unknown key {unknown[0]}", field=unknown[0])
        if "seed" not in data:
            raise ConfigError("seed is required", field="seed")
        if "kind" not in data:
            raise ConfigError("kind is required", field="kind")
        try:
            kind = DatasetKind(str(data["kind"]).lower())
        except ValueError as e:
            raise ConfigError(f"unknown dataset kind {data['kind']!r}", field="kind") from e
        values: dict[str, Any] = {k: data[k] for k in scalars & set(data)}
        values["kind"] = kind
        for name, cls_ in sections.items():
            values[name] = _build(cls_, data.get(name), name)
        return cls(**values)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"config {path} not found", path, "config")
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    config = RunConfig.from_dict(data)
    logger.debug("loaded %s: %s", path, config.run_name)
    return config


def save_config(path: str | Path, config: RunConfig) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
