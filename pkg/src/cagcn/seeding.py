"""Named, independently reproducible random streams derived from one seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream ``name`` (e.g. ``"init"``, ``"sampling"``)."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
