"""
Run loggers: per-epoch training CSV files and detection-event JSON lines.
"""

from __future__ import annotations

import csv
import json
import logging
from typing import IO, Any

logger = logging.getLogger(__name__)

EPOCH_COLUMNS = ["Epoch", "Objective", "Loss", "LearningRate", "Seconds"]


class EpochLogger:
    """Logs one CSV row per training epoch."""

    def __init__(self) -> None:
        self._log_file_path: str | None = None
        self._log_file: IO[str] | None = None
        self._csv_writer: Any = None
        self.is_logging = False

    def set_log_path(self, log_file_path: str | None) -> None:
        """Sets the path for the log file."""
        self._log_file_path = log_file_path

    def start_logging(self) -> None:
        """Opens the log file and writes the CSV header."""
        if not self._log_file_path:
            return

        try:
            # The file stays open for the whole run, so no context manager here
            self._log_file = open(  # noqa: SIM115
                self._log_file_path, mode="w", newline="", encoding="utf-8"
            )
            self._csv_writer = csv.writer(self._log_file)
            self._csv_writer.writerow(EPOCH_COLUMNS)
            self.is_logging = True
        except OSError as e:
            self.is_logging = False
            logger.error("Error opening epoch log %s: %s", self._log_file_path, e)

    def log_epoch(
        self, epoch: int, objective: float, loss: float, learning_rate: float, seconds: float
    ) -> None:
        """Logs a single epoch summary.

        Args:
            epoch: 1-based epoch number
            objective: Mean per-frame training objective (higher is better)
            loss: Mean minimized loss
            learning_rate: Learning rate used during the epoch
            seconds: Wall time spent on the epoch
        """
        if not self.is_logging or not self._csv_writer:
            return
        self._csv_writer.writerow(
            [epoch, f"{objective:.6f}", f"{loss:.6f}", f"{learning_rate:.6g}", f"{seconds:.2f}"]
        )
        assert self._log_file is not None
        self._log_file.flush()

    def stop_logging(self) -> None:
        """Closes the log file."""
        if self.is_logging and self._log_file:
            self._log_file.close()
            self._log_file = None
            self._csv_writer = None
            self.is_logging = False


class EventLogger:
    """Writes detection events as JSON lines ``{stream_id, t_s, margin, ww_end_s}``."""

    def __init__(self) -> None:
        self._log_file_path: str | None = None
        self._log_file: IO[str] | None = None
        self.is_logging = False
        self.count = 0

    def set_log_path(self, log_file_path: str | None) -> None:
        self._log_file_path = log_file_path

    def start_logging(self) -> None:
        if not self._log_file_path:
            return
        try:
            self._log_file = open(  # noqa: SIM115
                self._log_file_path, mode="w", newline="\n", encoding="utf-8"
            )
            self.is_logging = True
            self.count = 0
        except OSError as e:
            self.is_logging = False
            logger.error("Error opening event log %s: %s", self._log_file_path, e)

    def log_event(self, stream_id: str, event: Any) -> None:
        """Logs one :class:`~core.decoder.DetectionEvent`."""
        if not self.is_logging or not self._log_file:
            return
        record = {
            "stream_id": stream_id,
            "t_s": round(event.trigger_time_s, 4),
            "margin": round(event.score_margin, 6),
            "ww_end_s": round(event.ww_end_estimate_s, 4),
        }
        self._log_file.write(json.dumps(record) + "\n")
        self.count += 1

    def stop_logging(self) -> None:
        if self.is_logging and self._log_file:
            self._log_file.close()
            self._log_file = None
            self.is_logging = False
