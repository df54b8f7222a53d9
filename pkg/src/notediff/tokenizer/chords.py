"""Half-measure chord labelling by pitch-class template correlation."""
from __future__ import annotations

import numpy as np

from .grid import GridConfig, MeasureGrid
from .score import Score

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_FLATS = {"Db": 1, "Eb": 3, "Gb": 6, "Ab": 8, "Bb": 10, "Cb": 11, "Fb": 4, "E#": 5, "B#": 0}
QUALITIES = {"maj": (0, 4, 7), "min": (0, 3, 7), "7": (0, 4, 7, 10)}
NO_CHORD = "N"


def _labels_and_templates():
    labels, templates = [], []
    for quality, intervals in QUALITIES.items():
        for root in range(12):
            t = np.zeros(12)
            t[[(root + i) % 12 for i in intervals]] = 1.0
            labels.append(f"{PITCH_NAMES[root]}:{quality}")
            templates.append(t)
    return labels, np.array(templates)


TEMPLATE_LABELS, TEMPLATES = _labels_and_templates()
CHORD_LABELS = (NO_CHORD, *TEMPLATE_LABELS)


def pitch_class_index(name: str) -> int:
    if name in PITCH_NAMES:
        return PITCH_NAMES.index(name)
    if name in _FLATS:
        return _FLATS[name]
    raise ValueError(f"unknown pitch name {name!r}")


def parse_chord(text: str) -> str:
    """Normalise user spellings ("C7", "Am", "Bb:maj") to a canonical label."""
    text = text.strip()
    if text == NO_CHORD:
        return text
    if ":" in text:
        root, quality = text.split(":", 1)
    else:
        root = text[:2] if len(text) > 1 and text[1] in "#b" else text[:1]
        quality = text[len(root):] or "maj"
        quality = {"m": "min", "min": "min", "maj": "maj", "M": "maj", "7": "7"}.get(quality, quality)
    quality = {"m": "min", "M": "maj"}.get(quality, quality)
    if quality not in QUALITIES:
        raise ValueError(f"unsupported chord quality in {text!r}")
    return f"{PITCH_NAMES[pitch_class_index(root)]}:{quality}"


def classify_histogram(hist: np.ndarray) -> str:
    hist = np.asarray(hist, dtype=float)
    if hist.sum() <= 0 or np.ptp(hist) == 0:
        return NO_CHORD
    h = hist - hist.mean()
    t = TEMPLATES - TEMPLATES.mean(axis=1, keepdims=True)
    corr = (t @ h) / (np.linalg.norm(t, axis=1) * np.linalg.norm(h))
    corr = np.round(corr, 12)  # exact ties resolve by template order
    best = int(np.argmax(corr))
    return TEMPLATE_LABELS[best] if corr[best] > 0 else NO_CHORD


def chord_windows(score: Score, grid: GridConfig, measures: MeasureGrid | None = None):
    """Chord label per half-measure window, as ``((start_unit, end_unit), label)``."""
    tpq = score.ticks_per_quarter
    if measures is None:
        measures = MeasureGrid([(grid.to_units(t, tpq), n, d) for t, n, d in score.time_signatures], grid)
    end = grid.to_units(score.end_tick(), tpq)
    notes = score.pitched_notes()
    scale = grid.subdivisions / tpq
    on = np.array([n.onset for n in notes], dtype=float) * scale
    off = np.array([n.onset + n.duration for n in notes], dtype=float) * scale
    pcs = np.array([n.pitch % 12 for n in notes], dtype=int)
    windows = []
    m = 0
    while measures.start(m) <= end:
        start, length = measures.start(m), measures.length(m)
        half = length / 2
        for a, b in ((start, start + half), (start + half, start + length)):
            overlap = np.clip(np.minimum(off, b) - np.maximum(on, a), 0, None)
            hist = np.bincount(pcs, weights=overlap, minlength=12)
            windows.append(((a, b), classify_histogram(hist)))
        m += 1
    return windows


def detect_chords(score: Score, grid: GridConfig | None = None):
    """One chord label per half-measure window; windows are given in ticks."""
    grid = grid or GridConfig()
    tpq = score.ticks_per_quarter
    return [((grid.to_ticks(a, tpq), grid.to_ticks(b, tpq)), label)
            for (a, b), label in chord_windows(score, grid)]
