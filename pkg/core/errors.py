"""Exception hierarchy for wakeforge.

Every error raised on purpose by the package derives from :class:`WakeForgeError`
so the CLI can turn it into a one-line message and exit code 1. Errors caused
by bad input values also derive from :class:`ValueError` and carry the
offending context as attributes.
"""

from __future__ import annotations

from pathlib import Path


class WakeForgeError(Exception):
    """Base class for all wakeforge errors."""


# ---------------------------------------------------------------------------
# Audio and features
# ---------------------------------------------------------------------------
class AudioTooShortError(WakeForgeError, ValueError):
    """Audio does not contain a single full analysis window."""

    def __init__(self, message: str, num_samples: int):
        super().__init__(message)
        self.num_samples = num_samples


class NonFiniteError(WakeForgeError, ValueError):
    """An input array contains NaN or infinite values."""

    def __init__(self, message: str, what: str):
        super().__init__(message)
        self.what = what


class InvalidAugmentSpecError(WakeForgeError, ValueError):
    def __init__(self, message: str, field: str):
        super().__init__(message)
        self.field = field


class FormatError(WakeForgeError, ValueError):
    """A binary artifact does not start with the expected magic or is truncated."""

    def __init__(self, message: str, path: str | Path, magic: bytes | None = None):
        super().__init__(message)
        self.path = str(path)
        self.magic = magic


# ---------------------------------------------------------------------------
# Topology and graphs
# ---------------------------------------------------------------------------
class TopologyIndexError(WakeForgeError, ValueError):
    def __init__(self, message: str, unit: object, state: int | None = None):
        super().__init__(message)
        self.unit = unit
        self.state = state


class GraphError(WakeForgeError, ValueError):
    """A graph violates its structural invariants (start, endpoints, labels)."""


class UnknownTranscriptError(WakeForgeError, ValueError):
    def __init__(self, message: str, token: str):
        super().__init__(message)
        self.token = token


class AlignmentError(WakeForgeError, ValueError):
    """An aligned span cannot host the states of its unit."""

    def __init__(self, message: str, unit: str, length: int, needed: int):
        super().__init__(message)
        self.unit = unit
        self.length = length
        self.needed = needed


class EmptyLatticeError(WakeForgeError, ValueError):
    """The boundary tolerance left no start-to-final path in a numerator lattice."""


class NoAcceptedPathError(WakeForgeError, ValueError):
    """A graph accepts no path of the requested length (log Z is minus infinity)."""

    def __init__(self, message: str, role: str = "graph"):
        super().__init__(message)
        self.role = role


class EmptyNumeratorError(NoAcceptedPathError):
    def __init__(self, message: str):
        super().__init__(message, role="numerator")


class EmptyDenominatorError(NoAcceptedPathError):
    def __init__(self, message: str):
        super().__init__(message, role="denominator")


# ---------------------------------------------------------------------------
# Network and training
# ---------------------------------------------------------------------------
class ShapeMismatchError(WakeForgeError, ValueError):
    def __init__(self, message: str, expected: object = None, actual: object = None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class ArchitectureMismatchError(WakeForgeError, ValueError):
    def __init__(self, message: str, layer: str | int | None = None):
        super().__init__(message)
        self.layer = layer


class FrameMismatchError(WakeForgeError, ValueError):
    """Teacher and student passes produced a different number of output frames."""

    def __init__(self, message: str, uid: str, teacher: int, student: int):
        super().__init__(message)
        self.uid = uid
        self.teacher = teacher
        self.student = student


class LabelRangeError(WakeForgeError, ValueError):
    def __init__(self, message: str, label: int, limit: int):
        super().__init__(message)
        self.label = label
        self.limit = limit


class TrainingDivergedError(WakeForgeError, RuntimeError):
    """The training objective became NaN or infinite."""

    def __init__(self, message: str, epoch: int, uid: str):
        super().__init__(message)
        self.epoch = epoch
        self.uid = uid


# ---------------------------------------------------------------------------
# Decoding, evaluation, configuration
# ---------------------------------------------------------------------------
class UnmatchedEventError(WakeForgeError, ValueError):
    """A detection event does not correspond to the given reference end time."""


class EmptyEvalSetError(WakeForgeError, ValueError):
    pass


class ConfigError(WakeForgeError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class MissingArtifactError(WakeForgeError, FileNotFoundError):
    """A prerequisite artifact (checkpoint, manifest, ...) is not on disk."""

    def __init__(self, message: str, path: str | Path, artifact: str):
        super().__init__(message)
        self.path = str(path)
        self.artifact = artifact
