"""
Utility functions: logging setup, text folding, durations, digests.
"""

import hashlib
import html
import json
import logging
import re
import unicodedata
from pathlib import Path
from typing import Any, Optional

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhdw]?)\s*$", re.IGNORECASE)
_DURATION_UNITS = {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


def setup_logging(log_file: Optional[str] = None, verbose: bool = False) -> logging.Logger:
    """Configure logging to the console and, optionally, to a file."""
    logger = logging.getLogger("ustar")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    # Re-entrant: drop handlers from a previous call
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_fmt = logging.Formatter("%(asctime)s │ %(levelname)-7s │ %(message)s", datefmt="%H:%M:%S")
    console_handler.setFormatter(console_fmt)
    logger.addHandler(console_handler)

    # File handler
    if log_file:
        file_handler = logging.FileHandler(log_file, mode="a", encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_fmt = logging.Formatter("%(asctime)s │ %(levelname)-7s │ %(message)s", datefmt="%Y-%m-%d %H:%M:%S")
        file_handler.setFormatter(file_fmt)
        logger.addHandler(file_handler)

    return logger


def decode_html_entities(text: str) -> str:
    """Decode HTML entities in a string (e.g., &amp; → &, &#8217; → ')."""
    if not text:
        return ""
    return html.unescape(text)


def ascii_fold(text: str) -> str:
    """NFD-normalize and strip accents: 'Café' → 'Cafe'."""
    if not text:
        return ""
    text = unicodedata.normalize("NFD", text)
    return text.encode("ascii", "ignore").decode("ascii")


def parse_duration(value: Any) -> int:
    """
    Parse a duration such as "1h", "30m", "30d" or a bare number of seconds.
    Returns whole seconds.
    """
    if isinstance(value, (int, float)):
        seconds = float(value)
    else:
        match = _DURATION_RE.match(str(value))
        if not match:
            raise ValueError(f"Invalid duration: {value!r} (expected e.g. 1h, 30m, 30d)")
        seconds = float(match.group(1)) * _DURATION_UNITS[match.group(2).lower()]
    if seconds <= 0:
        raise ValueError(f"Duration must be positive: {value!r}")
    return int(round(seconds))


def file_digest(path: str, algorithm: str = "sha256") -> str:
    """Hex digest of a file's bytes, read in chunks."""
    h = hashlib.new(algorithm)
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def json_digest(obj: Any) -> str:
    """Stable sha256 over a JSON-serialisable object (sorted keys)."""
    payload = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def write_json(path: str, obj: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def format_summary(title: str, counters: dict[str, Any]) -> str:
    """Format a human-readable run summary."""
    width = max([len(k) for k in counters] + [10])
    lines = ["═" * 50, f"  {title}", "═" * 50]
    for key, value in counters.items():
        lines.append(f"  {key.replace('_', ' ').ljust(width)}  {value}")
    lines.append("═" * 50)
    return "\n".join(lines)
