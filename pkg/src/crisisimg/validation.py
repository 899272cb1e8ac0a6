"""Input validation helpers for the estimator-facing APIs."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def check_array(
    X,
    *,
    dtype=np.float64,
    ensure_2d: bool = True,
    allow_empty: bool = False,
    name: str = "X",
) -> np.ndarray:
    """Coerce to a contiguous ndarray and reject NaN/Inf entries."""
    arr = np.asarray(X, dtype=dtype)
    if ensure_2d and arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} is empty")
    if arr.size and not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} contains a non-finite value at index {tuple(bad)}")
    return np.ascontiguousarray(arr)


def check_random_state(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Turn a seed (or an existing Generator) into a numpy Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_labels(y: Sequence, *, name: str = "y") -> list:
    labels = list(y)
    if not labels:
        raise ValueError(f"{name} is empty")
    return labels
