"""Pipelines behind the command-line subcommands.

Each ``cmd_*`` function takes a :class:`~core.config.RunConfig`, reads its
inputs from and writes its artifacts under ``config.paths``, and raises a
:class:`~core.errors.WakeForgeError` when a prerequisite is missing.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import TRANSFER_MODES, RunConfig
from .dataset import augmented_copies, lfmmi_examples, load_corpus
from .decoder import DecoderConfig, StreamDecoder
from .errors import ConfigError, MissingArtifactError, WakeForgeError
from .evaluation import (
    EvalReport,
    OperatingPoint,
    StreamScan,
    SweepGrid,
    read_report,
    render_table,
    scan_corpus,
    score,
    tune_threshold,
    write_det_csv,
    write_report,
)
from .features import (
    FeatureMatrix,
    compute_logmel,
    read_feature_archive,
    read_wav,
    write_feature_archive,
    write_wav,
)
from .graphs import Graph, build_decoding, build_denominator, write_graph
from .manifest import (
    Manifest,
    UtteranceRecord,
    make_eval_concat,
    read_manifest,
    record_for,
    resolve_wav,
    subset_positives,
    write_manifest,
)
from .pretraining import (
    AmTask,
    distill,
    distill_mse,
    finetune_wakeword,
    make_distill_batches,
    pretrain_am,
    transfer_init,
)
from .run_logger import EpochLogger, EventLogger
from .synth import CorpusSpec, SynthUtterance, iter_corpus
from .tdnnf import Network, load_architecture, load_checkpoint, save_checkpoint
from .topology import build_topology
from .trainer import LfmmiLoss, Trainer, TrainOptions
from .utils import derive_rng, format_model_label

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "eval", "am")


def split_seed(seed: int, split: str) -> int:
    """Independent corpus seed per split."""
    return int(derive_rng(seed, "split", split).integers(0, 2**63))


def corpus_specs(config: RunConfig) -> dict[str, CorpusSpec]:
    """Train and dev share a speaker pool; eval speakers are held out."""
    c = config.corpus
    kind = config.kind
    return {
        "train": CorpusSpec(kind, c.num_positive, c.negative_hours,
                            seed=split_seed(config.seed, "train"),
                            num_speakers=c.num_speakers, prefix="train"),
        "dev": CorpusSpec(kind, 0, c.dev_negative_hours, seed=split_seed(config.seed, "dev"),
                          num_speakers=c.num_speakers, prefix="dev"),
        "eval": CorpusSpec(kind, c.eval_positive, c.eval_negative_hours,
                           seed=split_seed(config.seed, "eval"), num_speakers=c.eval_speakers,
                           speaker_offset=c.num_speakers, prefix="eval"),
        "am": CorpusSpec(kind, 0, num_negative=c.am_utterances,
                         seed=split_seed(config.seed, "am"), num_speakers=c.num_speakers,
                         pauses=True, prefix="am"),
    }


def train_options(config: RunConfig, epochs: int | None = None) -> TrainOptions:
    t = config.train
    return TrainOptions(
        epochs=t.epochs if epochs is None else epochs,
        learning_rate=t.learning_rate,
        final_learning_rate=t.final_learning_rate,
        momentum=t.momentum,
        batch_size=t.batch_size,
        semiorth_interval=t.semiorth_interval,
        grad_clip=t.grad_clip,
        seed=config.seed,
        workers=config.workers,
    )


def decoder_config(config: RunConfig, threshold: float = 0.0) -> DecoderConfig:
    d = config.decoder
    return DecoderConfig(
        threshold=threshold,
        beam=d.beam,
        chunk_frames=d.chunk_frames,
        refractory_frames=d.refractory_frames,
        block_frames=d.block_frames,
    )


def model_name(config: RunConfig, mode: str | None = None, n: int | str | None = None) -> str:
    return f"{mode or config.mode}-n{config.n if n is None else n}"


def _manifest(config: RunConfig, split: str) -> Manifest:
    path = config.paths.manifest(split)
    if not path.is_file():
        raise MissingArtifactError(f"{path} not found; run 'prepare' first", path, "manifest")
    return read_manifest(path, split)


def _checkpoint(path: Path, artifact: str) -> Network:
    if not path.is_file():
        raise MissingArtifactError(f"missing {artifact} checkpoint {path}", path, artifact)
    net, _ = load_checkpoint(path)
    return net


def _epoch_logger(path: Path) -> EpochLogger:
    epoch_logger = EpochLogger()
    epoch_logger.set_log_path(str(path))
    return epoch_logger


# ---------------------------------------------------------------------------
# prepare / features
# ---------------------------------------------------------------------------
def cmd_prepare(config: RunConfig) -> dict[str, Path]:
    """Synthesize every split, write audio, manifests, features and graphs."""
    paths = config.paths
    written = {}
    for split, spec in corpus_specs(config).items():
        records = []
        for utt in iter_corpus(spec):
            wav = f"{split}/{utt.uid}.wav"
            write_wav(paths.audio / wav, utt.audio)
            records.append(record_for(utt, wav))
        manifest = Manifest(records, split)
        write_manifest(paths.manifest(split), manifest)
        written[split] = paths.manifest(split)
        logger.info("%s: %d positives, %d negatives", split, len(manifest.positives),
                    len(manifest.negatives))
    cmd_features(config)
    topology = build_topology(config.kind)
    write_graph(paths.graphs / "denominator.graph", build_denominator(config.kind, topology))
    write_graph(paths.graphs / "decoding.graph", build_decoding(config.kind, topology))
    return written


def feature_path(config: RunConfig, split: str, record: UtteranceRecord) -> Path:
    return config.paths.features / split / f"{record.id}.feat"


def cmd_features(config: RunConfig, splits: Sequence[str] = ("train", "dev", "eval")) -> int:
    """Write a feature archive for every record that does not have one yet."""
    count = 0
    for split in splits:
        manifest = _manifest(config, split)
        for record in manifest.records:
            path = feature_path(config, split, record)
            if path.is_file():
                continue
            audio = read_wav(resolve_wav(record, config.paths.audio))
            write_feature_archive(path, compute_logmel(audio))
            count += 1
    logger.info("computed features for %d utterances", count)
    return count


def load_features(config: RunConfig, split: str, record: UtteranceRecord) -> np.ndarray:
    path = feature_path(config, split, record)
    if path.is_file():
        return read_feature_archive(path).frames
    feats: FeatureMatrix = compute_logmel(read_wav(resolve_wav(record, config.paths.audio)))
    return feats.frames


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------
def _am_corpus(config: RunConfig) -> list[SynthUtterance]:
    return load_corpus(_manifest(config, "am"), config.paths.audio, config.kind)


def cmd_pretrain_am(config: RunConfig, role: str = "am") -> Path:
    """Pretrain the acoustic model (``role="am"``) or the distillation teacher."""
    if role not in ("am", "teacher"):
        raise ConfigError(f"unknown pretraining role {role!r}", field="role")
    t = config.train
    arch = load_architecture(t.am_architecture if role == "am" else t.teacher_architecture)
    task = AmTask()
    examples = task.examples(_am_corpus(config))
    epochs = t.am_epochs
    path = config.paths.model(role)
    epoch_logger = _epoch_logger(path.with_suffix(".csv"))
    epoch_logger.start_logging()
    try:
        net, _ = pretrain_am(arch, examples, train_options(config, epochs), task=task,
                             epoch_logger=epoch_logger)
    finally:
        epoch_logger.stop_logging()
    save_checkpoint(path, net, extra={"role": role, "kind": config.kind.value})
    logger.info("%s %s saved to %s", role, format_model_label(
        net.num_params, net.left_context, net.right_context), path)
    return path


def cmd_distill(config: RunConfig) -> Path:
    """Regress the student's lower stack onto the teacher bottleneck."""
    teacher = _checkpoint(config.paths.model("teacher"), "teacher")
    student_config = load_architecture(config.architecture_name)
    corpus = _wakeword_corpus(config)
    batches = make_distill_batches(corpus, asymmetric=config.train.asymmetric, seed=config.seed,
                                   augment=config.augment)
    held_out = batches[-max(1, len(batches) // 10):]
    train_batches = batches[: len(batches) - len(held_out)] or batches
    path = config.paths.model("ts-lower")
    epoch_logger = _epoch_logger(path.with_suffix(".csv"))
    epoch_logger.start_logging()
    try:
        lower, _ = distill(teacher, student_config, train_batches,
                           train_options(config, config.train.distill_epochs),
                           cache_dir=config.paths.cache / "bottleneck",
                           epoch_logger=epoch_logger)
    finally:
        epoch_logger.stop_logging()
    baseline = Network(lower.config, seed=config.seed + 1)
    logger.info("held-out MSE %.5f (random init %.5f)", distill_mse(lower, teacher, held_out),
                distill_mse(baseline, teacher, held_out))
    save_checkpoint(path, lower, extra={"role": "ts-lower", "asymmetric": config.train.asymmetric})
    return path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def _wakeword_corpus(config: RunConfig) -> list[SynthUtterance]:
    manifest = subset_positives(_manifest(config, "train"), config.n)
    return load_corpus(manifest, config.paths.audio, config.kind)


def _train_corpus(config: RunConfig) -> list[SynthUtterance]:
    corpus = _wakeword_corpus(config)
    return corpus + augmented_copies(corpus, config.kind, config.seed, config.augment)


def cmd_train(config: RunConfig) -> Path:
    """Train a wake-word model in the configured mode; returns the checkpoint path."""
    mode = config.mode
    topology = build_topology(config.kind)
    den = build_denominator(config.kind, topology)
    arch = load_architecture(config.architecture_name)
    options = train_options(config)

    # Check prerequisites before the expensive example build.
    if mode == "phone-align+ts":
        lower = _checkpoint(config.paths.model("ts-lower"), "teacher-student lower stack")
    elif mode in TRANSFER_MODES:
        am = _checkpoint(config.paths.model("am"), "acoustic model")

    examples = lfmmi_examples(_train_corpus(config), topology, mode,
                              tolerance=config.train.tolerance, workers=config.workers)
    if not examples:
        raise ConfigError(f"no usable training utterances for {mode}", field="n")
    name = model_name(config)
    path = config.paths.model(name)
    epoch_logger = _epoch_logger(path.with_suffix(".csv"))
    epoch_logger.start_logging()
    try:
        if mode == "phone-align+ts":
            net, _ = finetune_wakeword(lower, arch, examples, den, options,
                                       unfreeze=config.train.unfreeze, epoch_logger=epoch_logger)
        else:
            resolved = arch.with_output_dim(topology.pdf_count)
            if mode in TRANSFER_MODES:
                net = transfer_init(am, resolved, num_layers=resolved.lower_layers,
                                    seed=config.seed)
                if config.train.unfreeze:
                    net.unfreeze()
            else:
                net = Network(resolved, seed=config.seed)
            Trainer(net, LfmmiLoss(den), options, epoch_logger).train(examples)
    finally:
        epoch_logger.stop_logging()

    label = format_model_label(net.num_params, net.left_context, net.right_context)
    save_checkpoint(path, net, extra={"mode": mode, "kind": config.kind.value, "n": config.n,
                                      "label": label})
    logger.info("trained %s %s on %d utterances -> %s", mode, label, len(examples), path)
    return path


# ---------------------------------------------------------------------------
# tune / decode / evaluate
# ---------------------------------------------------------------------------
def _decoding_graph(config: RunConfig, net: Network) -> Graph:
    graph = build_decoding(config.kind, build_topology(config.kind))
    if net.config.output_dim != graph.pdf_count:
        raise ConfigError(
            f"checkpoint has {net.config.output_dim} outputs, {config.kind.value} needs "
            f"{graph.pdf_count}", field="kind",
        )
    return graph


def _scan(
    config: RunConfig, net: Network, graph: Graph, split: str, records: Sequence[UtteranceRecord]
) -> list[StreamScan]:
    items = [(r.id, load_features(config, split, r), r.ww_end_s) for r in records]
    return scan_corpus(net, graph, items, decoder_config(config), config.workers)


def cmd_tune(config: RunConfig, checkpoint: Path) -> OperatingPoint:
    """Tune the threshold on the dev negatives and store it next to the checkpoint."""
    net = _checkpoint(checkpoint, "model")
    graph = _decoding_graph(config, net)
    negatives = _manifest(config, "dev").negatives
    scans = _scan(config, net, graph, "dev", negatives)
    point = tune_threshold(scans, target_fph=config.eval.target_fph,
                           refractory_frames=config.decoder.refractory_frames)
    out = checkpoint.with_suffix(".threshold.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump({"threshold": str(point.threshold), "allowed": point.allowed,
                   "false_positives": point.false_positives, "hours": point.hours}, fh, indent=2)
        fh.write("\n")
    return point


def read_threshold(checkpoint: Path) -> float:
    path = checkpoint.with_suffix(".threshold.json")
    if not path.is_file():
        raise MissingArtifactError(f"{path} not found; run 'tune' first", path, "threshold")
    with open(path, encoding="utf-8") as fh:
        return float(json.load(fh)["threshold"])


def cmd_decode(
    config: RunConfig,
    checkpoint: Path,
    wavs: Sequence[Path],
    *,
    threshold: float | None = None,
    chunk_frames: int | None = None,
    events_path: Path | None = None,
) -> int:
    """Stream each WAV through the detector; returns the number of events."""
    net = _checkpoint(checkpoint, "model")
    graph = _decoding_graph(config, net)
    theta = read_threshold(checkpoint) if threshold is None else threshold
    dconf = decoder_config(config, theta)
    chunk = chunk_frames or dconf.chunk_frames
    event_logger = EventLogger()
    event_logger.set_log_path(str(events_path) if events_path else None)
    event_logger.start_logging()
    total = 0
    try:
        for wav in wavs:
            frames = compute_logmel(read_wav(wav)).frames
            decoder = StreamDecoder(net, graph, dconf)
            for first in range(0, len(frames), chunk):
                decoder.push(frames[first : first + chunk])
            decoder.finish()
            for event in decoder.events:
                event_logger.log_event(Path(wav).stem, event)
                print(f"{Path(wav).stem}\t{event.trigger_time_s:.2f}s\t"
                      f"margin={event.score_margin:.3f}\tww_end={event.ww_end_estimate_s:.2f}s")
            total += len(decoder.events)
    finally:
        event_logger.stop_logging()
    return total


def _concat_manifest(config: RunConfig, manifest: Manifest) -> Manifest:
    concat, skipped = make_eval_concat(manifest, config.paths.audio, subdir="eval/concat")
    if skipped:
        logger.warning("eval-concat skipped %d positives", skipped)
    return concat


def cmd_evaluate(config: RunConfig, checkpoint: Path) -> EvalReport:
    """Tune on dev negatives, score the eval split (and its concat variant), write reports."""
    net = _checkpoint(checkpoint, "model")
    graph = _decoding_graph(config, net)
    point = cmd_tune(config, checkpoint)
    manifest = _manifest(config, "eval")
    negatives = _scan(config, net, graph, "eval", manifest.negatives)
    positives = _scan(config, net, graph, "eval", manifest.positives)
    label = format_model_label(net.num_params, net.left_context, net.right_context)
    report = score(positives, negatives, point.threshold, right_context=net.right_context,
                   n=config.n, refractory_frames=config.decoder.refractory_frames, model=label)
    if config.eval.concat:
        concat = _concat_manifest(config, manifest)
        if concat.positives:
            concat_scans = _scan(config, net, graph, "concat", concat.positives)
            report.fnr_concat_percent = score(
                concat_scans, negatives, point.threshold, right_context=net.right_context,
                refractory_frames=config.decoder.refractory_frames,
            ).fnr_percent
    out = config.paths.reports / checkpoint.stem
    write_report(out.with_suffix(".json"), report)
    write_det_csv(out.with_suffix(".det.csv"), report.det_points)
    return report


# ---------------------------------------------------------------------------
# sweep / report
# ---------------------------------------------------------------------------
@dataclass
class SweepResult:
    grid: SweepGrid
    missing: list[tuple[str, str]]


def cmd_sweep(config: RunConfig, train_missing: bool = False) -> SweepResult:
    """Evaluate every method x size cell; cells without a checkpoint stay empty."""
    sizes = [str(s) for s in config.eval.sizes]
    grid = SweepGrid(sizes, list(config.eval.methods))
    for method in config.eval.methods:
        for size in config.eval.sizes:
            cell = config.with_overrides(mode=method, n=size)
            checkpoint = config.paths.model(model_name(cell))
            try:
                if not checkpoint.is_file() and train_missing:
                    cmd_train(cell)
                if not checkpoint.is_file():
                    logger.warning("no checkpoint for %s n=%s", method, size)
                    continue
                report = cmd_evaluate(cell, checkpoint)
            except WakeForgeError as e:
                logger.warning("%s n=%s: %s", method, size, e)
                continue
            grid.put(method, size, report)
            grid.models[method] = report.model
    out = config.paths.reports
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump(grid.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    table = render_table(grid)
    (out / "table.txt").write_text(table, encoding="utf-8")
    missing = grid.missing()
    if missing:
        logger.warning("missing cells: %s", ", ".join(f"{m}/n={s}" for m, s in missing))
    return SweepResult(grid, missing)


def cmd_report(path: Path) -> str:
    """Render the table of a stored sweep (or a single report) from JSON."""
    if not path.is_file():
        raise MissingArtifactError(f"{path} not found", path, "report")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if "cells" in data:
        return render_table(SweepGrid.from_dict(data))
    report = read_report(path)
    grid = SweepGrid([str(report.n)], [path.stem])
    grid.put(path.stem, report.n, report)
    if report.model:
        grid.models[path.stem] = report.model
    return render_table(grid)
