"""Main application logic module.

Parses the command line and dispatches to the pipelines in
:mod:`core.commands`.
"""

import argparse
import logging
import sys
from pathlib import Path

from .errors import WakeForgeError
from .version import __version__

logger = logging.getLogger(__name__)

COMMANDS = (
    "prepare", "features", "pretrain-am", "distill", "train", "tune", "decode", "evaluate",
    "sweep", "report",
)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} must be at least 1")
    return value


def _size(text: str) -> int | str:
    return "all" if text == "all" else _positive(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="run configuration (JSON)")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--workers", type=_positive, help="parallel utterance workers")
    common.add_argument("--out", help="override the output directory")

    parser = argparse.ArgumentParser(
        prog="wakeforge",
        description="Wake-word detection with LF-MMI training, streaming decoding and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("prepare", parents=[common], help="synthesize corpora, features and graphs")
    sub.add_parser("features", parents=[common], help="compute missing feature archives")
    p = sub.add_parser("pretrain-am", parents=[common], help="pretrain the AM or the teacher")
    p.add_argument("--role", choices=("am", "teacher"), default="am")
    sub.add_parser("distill", parents=[common], help="teacher-student bottleneck regression")
    p = sub.add_parser("train", parents=[common], help="train a wake-word model")
    p.add_argument("--mode", help="override the configured training mode")
    p.add_argument("--n", type=_size, help="override the positive subset size")
    for name, text in (("tune", "tune the threshold on dev negatives"),
                       ("evaluate", "score a checkpoint on the eval split")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", type=Path, required=True)
    p = sub.add_parser("decode", parents=[common], help="stream WAV files through the detector")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--threshold", type=float, help="use this threshold instead of the tuned one")
    p.add_argument("--chunk-frames", type=_positive, help="input frames per push")
    p.add_argument("--events", type=Path, help="write events as JSON lines")
    p.add_argument("wavs", type=Path, nargs="+")
    p = sub.add_parser("sweep", parents=[common], help="evaluate methods x subset sizes")
    p.add_argument("--train", action="store_true", help="train missing checkpoints first")
    p = sub.add_parser("report", help="render a stored sweep or report as a table")
    p.add_argument("path", type=Path)
    return parser


def run(args: argparse.Namespace) -> int:
    from . import commands
    from .config import load_config

    if args.command == "report":
        print(commands.cmd_report(args.path), end="")
        return 0

    config = load_config(args.config).with_overrides(
        seed=args.seed, workers=args.workers, out=args.out,
        mode=getattr(args, "mode", None), n=getattr(args, "n", None),
    )
    if args.command == "prepare":
        commands.cmd_prepare(config)
    elif args.command == "features":
        commands.cmd_features(config)
    elif args.command == "pretrain-am":
        commands.cmd_pretrain_am(config, role=args.role)
    elif args.command == "distill":
        commands.cmd_distill(config)
    elif args.command == "train":
        print(commands.cmd_train(config))
    elif args.command == "tune":
        point = commands.cmd_tune(config, args.checkpoint)
        print(f"threshold {point.threshold:.4f} ({point.false_positives} FP on "
              f"{point.hours:.2f} h, allowed {point.allowed})")
    elif args.command == "decode":
        commands.cmd_decode(config, args.checkpoint, args.wavs, threshold=args.threshold,
                            chunk_frames=args.chunk_frames, events_path=args.events)
    elif args.command == "evaluate":
        report = commands.cmd_evaluate(config, args.checkpoint)
        print(f"FNR {report.fnr_percent:.2f}% at {config.eval.target_fph} FP/h, "
              f"latency p90 {report.latency_label}")
    elif args.command == "sweep":
        result = commands.cmd_sweep(config, train_missing=args.train)
        print(commands.render_table(result.grid), end="")
        if result.missing:
            return 1
    return 0


def main() -> int:
    """Entry point for the ``wakeforge`` command."""
    from .utils import configure_logging

    parser = build_parser()
    args = parser.parse_args()
    configure_logging()
    try:
        return run(args)
    except WakeForgeError as e:
        logger.debug("command failed", exc_info=True)
        print(f"wakeforge: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
