"""Library utilities.

This module provides utility functions for the pywmlab library, organized into categories:

**Seeding:**
    - :func:`derive_seed` - Named sub-seeds from one experiment seed
    - :func:`rng_for` - ``numpy`` generator for a named sub-seed

**Arithmetic:**
    - :func:`round_half_up` - Ratio rounding used by dataset splits

**JSON Utilities:**
    - :func:`json_preview` - Single-line JSON preview with length limits
    - :func:`log_json_payload` - Debug logging for JSON payloads
    - :func:`save_json_payload` - Save JSON to UTF-8 files
    - :func:`load_json_payload` - Read JSON from UTF-8 files
"""

from __future__ import annotations

import hashlib
import json
import math
from contextlib import suppress
from fractions import Fraction
from logging import Logger
from pathlib import Path
from typing import Any

import numpy as np


def derive_seed(root: int, *names: object) -> int:
    """Derive a stable 63-bit sub-seed from a root seed and a path of names.

    The derivation is a hash, so it is identical across processes and Python
    versions (unlike :func:`hash`).

    Args:
        root: Experiment seed.
        *names: Sub-seed path, e.g. ``("shuffle", "embed", 3)``.

    Returns:
        Non-negative integer seed.

    Example:
        >>> derive_seed(0, "init") == derive_seed(0, "init")
        True
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode("ascii"))
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(root: int, *names: object) -> np.random.Generator:
    """Return a PCG64 generator seeded with :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(root, *names))


def round_half_up(count: int, ratio: float) -> int:
    """Return ``count * ratio`` rounded half-up, computed exactly.

    Example:
        >>> round_half_up(800, 0.7)
        560
        >>> round_half_up(5, 0.7)
        4
    """
    exact = Fraction(str(ratio)) * count
    return math.floor(exact + Fraction(1, 2))


def json_preview(obj: Any, *, maxlen: int = 2000) -> str:
    """Return a single-line JSON preview trimmed to maxlen with no indent.

    Args:
        obj: Any Python object to preview.
        maxlen: Maximum length of the returned string (default: 2000).

    Returns:
        A single-line JSON string, possibly truncated with "…".

    Example:
        >>> json_preview({"seed": 0, "tiers": ["small"]})
        '{"seed":0,"tiers":["small"]}'
    """
    try:
        s = json.dumps(obj, ensure_ascii=False, separators=(",", ":"), default=str)
    except Exception:
        s = str(obj)
    if len(s) > maxlen:
        s = s[:maxlen] + "…"
    return s


def log_json_payload(logger: Logger, tag: str, payload: Any, *, maxlen: int = 2000) -> None:
    """Log a one-line JSON payload preview at the DEBUG level."""
    with suppress(Exception):
        logger.debug("%s → %s", tag, json_preview(payload, maxlen=maxlen))


def save_json_payload(payload: Any, path: str | Path) -> Path:
    """Write the JSON payload to a UTF-8 file and return the path.

    Parent directories are created. Keys keep insertion order so reruns are byte-identical.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )
    return p


def load_json_payload(path: str | Path) -> Any:
    """Read a UTF-8 JSON file."""
    return json.loads(Path(path).read_text(encoding="utf-8"))
