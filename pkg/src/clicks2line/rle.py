"""Run-length mask codec: row-major, alternating background/foreground runs.

The first run counts leading background pixels (possibly 0) and runs sum to
width x height, so a mask round-trips bit-exactly through the wire format.
"""

from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    """Run lengths for a binary mask, starting with a background run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    breaks = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], breaks, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def decode(runs: list, width: int, height: int) -> np.ndarray:
    """Inverse of encode; raises ValueError on malformed input."""
    if width <= 0 or height <= 0:
        raise ValueError("dimensions must be positive")
    arr = np.asarray(runs)
    if arr.ndim != 1 or (len(arr) and not np.issubdtype(arr.dtype, np.integer)):
        raise ValueError("runs must be a flat list of integers")
    if len(arr) and arr.min() < 0:
        raise ValueError("runs must be non-negative")
    if arr.sum() != width * height:
        raise ValueError("runs must sum to width * height")
    values = (np.arange(len(arr)) % 2).astype(bool)
    flat = np.repeat(values, arr)
    return flat.reshape(height, width)
