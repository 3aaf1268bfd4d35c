"""Utility functions shared across wakeforge modules."""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Sequence
from pathlib import Path

import numpy as np

LOG_ENV_VAR = "WAKEFORGE_LOG"
_LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
def configure_logging(level: str | None = None) -> int:
    """Install a stream handler on the ``core`` logger.

    The level comes from ``level`` or, when omitted, from the ``WAKEFORGE_LOG``
    environment variable. Unknown names fall back to INFO.

    Returns:
        The numeric level that was applied.
    """
    name = (level or os.environ.get(LOG_ENV_VAR) or "INFO").strip().upper()
    numeric = logging.getLevelName(name)
    invalid = not isinstance(numeric, int)
    if invalid:
        numeric = logging.INFO

    root = logging.getLogger("core")
    if not any(getattr(h, "_wakeforge", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_LOG_FORMAT))
        handler._wakeforge = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(numeric)
    if invalid:
        logger.warning("Unknown %s value %r, using INFO", LOG_ENV_VAR, name)
    return int(numeric)


# ---------------------------------------------------------------------------
# Statistics helpers
# ---------------------------------------------------------------------------
def nearest_rank_percentile(values: Sequence[float], percent: float) -> float:
    """Return the nearest-rank percentile of ``values``.

    The value at 1-based rank ``ceil(percent/100 * n)`` of the sorted data.

    Raises:
        ValueError: If ``values`` is empty or ``percent`` is outside (0, 100].
    """
    if not values:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 < percent <= 100.0:
        raise ValueError(f"percent must be in (0, 100], got {percent}")
    ordered = sorted(float(v) for v in values)
    rank = math.ceil(percent / 100.0 * len(ordered))
    return ordered[max(rank, 1) - 1]


def derive_rng(seed: int, *salt: int | str) -> np.random.Generator:
    """Return an independent generator for ``seed`` and a stream label.

    Different salts give statistically independent streams, so components
    seeded from one run seed never share random numbers.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for item in salt:
        if isinstance(item, str):
            words.extend(item.encode("utf-8"))
        else:
            words.append(int(item) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def format_model_label(num_params: int, left_context: int, right_context: int) -> str:
    """Format a model annotation such as ``(358k, -150+10)``."""
    return f"({round(num_params / 1000)}k, -{left_context}+{right_context})"


# ---------------------------------------------------------------------------
# Resource helpers
# ---------------------------------------------------------------------------
def get_resource_path(*parts: str | Path) -> Path:
    """Return an absolute path to a resource shipped with the project.

    Resources are resolved relative to the project root (the parent
    directory of the ``core`` package), which is where ``resources/`` lives
    in a source checkout or an editable install.
    """
    # core/utils.py -> parent is 'core', parent of that is the project root
    base = Path(__file__).resolve().parents[1]
    return base.joinpath(*map(str, parts))
