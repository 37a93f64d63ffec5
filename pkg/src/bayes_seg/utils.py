"""Shared error vocabulary and small helpers for bayes_seg."""

import hashlib
import json
import logging
from collections.abc import Iterable, Iterator
from typing import Any, TextIO

logger = logging.getLogger(__name__)


class ParameterError(ValueError):
    """Raised when a numeric parameter is outside its valid range."""


class ClusteringError(ParameterError):
    """Raised when k-means cannot produce the requested number of classes."""


class ImageFormatError(ValueError):
    """Raised for unsupported or ill-formed image data."""


class ImageReadError(OSError):
    """Raised when an image file cannot be read. The message carries the path."""


class ConfigurationError(ValueError):
    """Raised for inconsistent configuration, e.g. a palette missing a label."""


class DegenerateInputError(ValueError):
    """Raised when an input has no structure to work with (e.g. a constant image)."""


class RegionSpecError(ValueError):
    """Raised when a synthetic layout overlaps itself or leaves pixels uncovered."""


class MalformedJsonLineError(ValueError):
    """Raised when a JSONL stream contains malformed JSON in strict mode."""


def _line_preview(line: str, *, max_chars: int = 100) -> str:
    """Return a truncated preview of a line for diagnostics."""
    return line[:max_chars] + "..." if len(line) > max_chars else line


def stream_json_lines(
    input_stream: Iterable[str] | TextIO,
    *,
    strict: bool = True,
) -> Iterator[dict[str, Any]]:
    """Stream and parse JSON lines from input.

    In strict mode, malformed JSON raises :class:`MalformedJsonLineError`.
    In non-strict mode, malformed lines are logged and skipped.
    """
    for line_num, line in enumerate(input_stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as e:
            line_preview = _line_preview(line)
            message = f"Malformed JSON at line {line_num}: {line_preview} (error: {e})"
            if strict:
                raise MalformedJsonLineError(message) from e
            logger.warning(message)


def canonical_json(value: Any) -> str:
    """Serialize to a key-sorted, whitespace-free JSON string."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def digest(value: Any, *, size: int = 8) -> str:
    """Hex BLAKE2b digest of a JSON-serializable value. Strings are hashed as-is."""
    s = value if isinstance(value, str) else canonical_json(value)
    return hashlib.blake2b(s.encode("utf-8"), digest_size=size).hexdigest()
