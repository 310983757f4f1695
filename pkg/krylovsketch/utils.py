"""Small helpers shared across the package."""

from __future__ import annotations

import hashlib
import os
from typing import Optional

import numpy as np


def fingerprint(*arrays: np.ndarray) -> str:
    """Return an md5 digest identifying the contents of ``arrays``."""
    digest = hashlib.md5()
    for array in arrays:
        data = np.ascontiguousarray(array)
        digest.update(str(data.shape).encode())
        digest.update(data.dtype.str.encode())
        digest.update(data.tobytes())
    return digest.hexdigest()


def relative_error(approx: np.ndarray, reference: np.ndarray) -> float:
    """Return ``||approx - reference|| / ||reference||`` (absolute when the reference is zero)."""
    ref_norm = float(np.linalg.norm(reference))
    err = float(np.linalg.norm(approx - reference))
    return err / ref_norm if ref_norm > 0 else err


def sketch_threads() -> Optional[int]:
    """Return the worker count from ``KRYLOV_SKETCH_THREADS``, or None when unset."""
    raw = os.getenv("KRYLOV_SKETCH_THREADS", "").strip()
    if not raw:
        return None
    try:
        threads = int(raw)
    except ValueError:
        raise ValueError(f"KRYLOV_SKETCH_THREADS must be an integer, got '{raw}'") from None
    if threads < 1:
        raise ValueError(f"KRYLOV_SKETCH_THREADS must be positive, got {threads}")
    return threads
