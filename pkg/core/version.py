"""Package version, read from the distribution metadata or the bundled version file."""

from importlib import metadata, resources

__all__ = ["__version__", "version_tuple"]

DISTRIBUTION = "wakeforge"
FALLBACK_VERSION = "0.0.0"


def _load_version() -> str:
    """Return the installed distribution's version, else ``version_info.txt``.

    Returns "0.0.0" when neither source can be read.
    """
    try:
        return metadata.version(DISTRIBUTION)
    except metadata.PackageNotFoundError:
        pass
    try:
        with resources.files("core").joinpath("version_info.txt").open(encoding="utf-8") as fh:
            return fh.read().strip() or FALLBACK_VERSION
    except Exception:  # noqa: BLE001 any read failure falls back
        return FALLBACK_VERSION


def version_tuple(version: str) -> tuple[int, ...]:
    """Numeric release components, ``"0.3.1-dev"`` -> ``(0, 3, 1)``."""
    release = version.split("-", 1)[0].split("+", 1)[0]
    parts = []
    for item in release.split("."):
        if not item.isdigit():
            break
        parts.append(int(item))
    return tuple(parts)


__version__ = _load_version()
