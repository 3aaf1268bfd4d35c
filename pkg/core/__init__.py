"""wakeforge: wake-word detection with LF-MMI training and streaming decoding."""

from .version import __version__  # noqa: F401
