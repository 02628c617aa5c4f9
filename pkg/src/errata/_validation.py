"""Input checks shared by the estimator wrappers."""
from __future__ import annotations

import numpy as np

from .audio import NUM_PATCHES, PATCH_DIM, SEGMENT_SAMPLES
from .notes import NoteEvent, NoteTrack


def check_finite(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinity")
    return arr


def check_waveform(w, name: str = "waveform", *, segment: bool = False) -> np.ndarray:
    """1-D finite waveform; with ``segment`` it must be exactly one segment long."""
    arr = check_finite(w, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if segment and len(arr) != SEGMENT_SAMPLES:
        raise ValueError(f"{name} must hold {SEGMENT_SAMPLES} samples, got {len(arr)}")
    return arr


def check_patch_grid(p, name: str = "patches") -> np.ndarray:
    """Accept (512, 256) or (batch, 512, 256); returns a float32 array."""
    arr = check_finite(p, name)
    if arr.shape[-2:] != (NUM_PATCHES, PATCH_DIM) or arr.ndim not in (2, 3):
        raise ValueError(f"{name} must have shape (..., {NUM_PATCHES}, {PATCH_DIM}), "
                         f"got {arr.shape}")
    return arr.astype(np.float32)


def check_track(t, name: str = "track") -> NoteTrack:
    if isinstance(t, NoteTrack):
        return t
    if isinstance(t, (str, bytes)) or not all(isinstance(n, NoteEvent) for n in t):
        raise TypeError(f"{name} must be a NoteTrack or a sequence of NoteEvents")
    return NoteTrack(tuple(t))


def check_pairs(X, name: str = "X") -> list:
    """Estimators over (score, practice) pairs take a list of 2-tuples."""
    if isinstance(X, tuple) and len(X) == 2 and isinstance(X[0], NoteTrack):
        X = [X]
    X = list(X)
    for k, item in enumerate(X):
        if not (isinstance(item, (tuple, list)) and len(item) == 2):
            raise ValueError(f"{name}[{k}] must be a (score, practice) pair")
    return X
