"""Per-piece pitch statistics: scale consistency and pitch / pitch-class entropy."""
from __future__ import annotations

import math

import numpy as np

from ..tokenizer.chords import PITCH_NAMES
from ..tokenizer.score import Score

MAJOR_STEPS = (0, 2, 4, 5, 7, 9, 11)
MINOR_STEPS = (0, 2, 3, 5, 7, 8, 10)  # natural minor


def default_scales() -> dict[str, frozenset]:
    """The 24 major and natural-minor scales keyed like ``"C:maj"``."""
    scales = {}
    for quality, steps in (("maj", MAJOR_STEPS), ("min", MINOR_STEPS)):
        for root in range(12):
            scales[f"{PITCH_NAMES[root]}:{quality}"] = frozenset((root + s) % 12 for s in steps)
    return scales


SCALES = default_scales()


def _pitches(piece) -> np.ndarray:
    """Pitched (non-drum) note pitches of a Score, or a plain pitch sequence."""
    if isinstance(piece, Score):
        return np.array([n.pitch for n in piece.pitched_notes()], dtype=np.int64)
    return np.asarray(piece, dtype=np.int64).ravel()


def scale_consistency(piece, scales: dict | None = None) -> float | None:
    """Largest fraction of notes whose pitch class lies in a single scale.

    Returns None when there are no pitched notes (drum-only or empty piece).
    """
    pitches = _pitches(piece)
    if pitches.size == 0:
        return None
    hist = np.bincount(pitches % 12, minlength=12)
    best = 0
    for members in (scales or SCALES).values():
        best = max(best, int(hist[list(members)].sum()))
    return best / pitches.size


def _entropy_bits(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(max(0.0, -(p * np.log2(p)).sum()))


def pitch_entropy(piece) -> float | None:
    """Shannon entropy in bits of the 128-bin pitch histogram."""
    pitches = _pitches(piece)
    if pitches.size == 0:
        return None
    return _entropy_bits(np.bincount(pitches, minlength=128))


def pitch_class_entropy(piece) -> float | None:
    """Shannon entropy in bits of the 12-bin pitch-class histogram (at most log2 12)."""
    pitches = _pitches(piece)
    if pitches.size == 0:
        return None
    return _entropy_bits(np.bincount(pitches % 12, minlength=12))


MAX_PCE = math.log2(12)
