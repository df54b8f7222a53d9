"""Attribute-control accuracy: tempo, key, time signature and instrument coverage."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..tokenizer.chords import PITCH_NAMES, pitch_class_index
from ..tokenizer.score import DRUMS, Score
from ..tokenizer.vocab import INSTRUMENT_ALIASES

# Krumhansl-Kessler probe-tone profiles, tonic first
MAJOR_PROFILE = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
MINOR_PROFILE = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])
DEFAULT_KEY = (0, "maj")
TEMPO_TOLERANCE = 10.0


def key_label(key: tuple[int, str]) -> str:
    return f"{PITCH_NAMES[key[0]]}:{key[1]}"


def parse_key(text: str) -> tuple[int, str]:
    """Accept "C:maj", "A:min", "C major", "a minor", "Am", "F#"."""
    s = text.strip()
    m = re.fullmatch(r"([A-Ga-g][#b]?)\s*(?::|\s)?\s*(maj|major|min|minor|m|M)?", s)
    if not m:
        raise ValueError(f"cannot parse key {text!r}")
    root, quality = m.group(1), m.group(2)
    root = root[0].upper() + root[1:]
    if quality in ("min", "minor", "m"):
        mode = "min"
    elif quality is None and s[0].islower():
        mode = "min"
    else:
        mode = "maj"
    return pitch_class_index(root), mode


def pitch_class_profile(score: Score) -> np.ndarray:
    """Duration-weighted pitch-class histogram of the pitched notes."""
    hist = np.zeros(12)
    for n in score.pitched_notes():
        hist[n.pitch % 12] += n.duration
    return hist


def detect_key(score: Score) -> tuple[int, str]:
    """Krumhansl-Schmuckler key finding; undetectable pieces count as C major."""
    hist = pitch_class_profile(score)
    if hist.sum() <= 0 or np.ptp(hist) == 0:
        return DEFAULT_KEY
    best, best_r = DEFAULT_KEY, -np.inf
    for mode, profile in (("maj", MAJOR_PROFILE), ("min", MINOR_PROFILE)):
        for tonic in range(12):
            r = np.corrcoef(hist, np.roll(profile, tonic))[0, 1]
            if r > best_r + 1e-12:
                best, best_r = (tonic, mode), r
    return best


def piece_tempo(score: Score) -> float:
    """Tempo (BPM) in effect for the most notes; ties go to the earlier tempo."""
    marks = sorted(score.tempo_map)
    onsets = np.array(sorted(n.onset for t in score.tracks for n in t.notes))
    if onsets.size == 0:
        return float(marks[0][1])
    ticks = np.array([m[0] for m in marks])
    idx = np.searchsorted(ticks, onsets, side="right") - 1
    counts = Counter(np.clip(idx, 0, None).tolist())
    top = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    return float(marks[top][1])


def piece_time_signature(score: Score) -> tuple[int, int]:
    num, den = sorted(score.time_signatures)[0][1:]
    return int(num), int(den)


def parse_time_signature(text) -> tuple[int, int]:
    if isinstance(text, (tuple, list)):
        return int(text[0]), int(text[1])
    num, den = str(text).strip().split("/")
    return int(num), int(den)


def parse_instruments(value) -> set[int]:
    """Instrument set from names/program numbers, e.g. "piano;violin" or [0, 40]."""
    if isinstance(value, str):
        items = [v for v in re.split(r"[;,|]", value) if v.strip()]
    else:
        items = list(value)
    out = set()
    for item in items:
        if isinstance(item, (int, np.integer)):
            out.add(int(item))
            continue
        name = item.strip().lower()
        if name.lstrip("-").isdigit():
            out.add(int(name))
        elif name in INSTRUMENT_ALIASES:
            out.add(INSTRUMENT_ALIASES[name])
        else:
            raise ValueError(f"unknown instrument {item!r}")
    if any(not 0 <= i <= DRUMS for i in out):
        raise ValueError(f"instrument out of range in {value!r}")
    return out


@dataclass
class ControlResult:
    """Hit ratios for TBT, CK, CTS and CI plus per-metric usable/excluded counts."""

    ratios: dict = field(default_factory=dict)
    evaluated: dict = field(default_factory=dict)
    excluded: dict = field(default_factory=dict)
    hits: dict = field(default_factory=dict)


def _missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and np.isnan(value):
        return True
    return isinstance(value, str) and not value.strip()


def control_metrics(generated, references) -> ControlResult:
    """Compare generated Scores with per-piece reference attributes.

    ``references`` holds one mapping per piece with optional keys ``tempo``,
    ``key``, ``time_signature`` and ``instruments``. A missing field drops that
    piece from the matching metric and is counted in ``excluded``.
    """
    if len(generated) != len(references):
        raise ValueError(f"{len(generated)} pieces but {len(references)} references")
    checks = {
        "tbt": ("tempo", lambda s, r: abs(piece_tempo(s) - float(r)) <= TEMPO_TOLERANCE),
        "ck": ("key", lambda s, r: detect_key(s) == (parse_key(r) if isinstance(r, str) else tuple(r))),
        "cts": ("time_signature", lambda s, r: piece_time_signature(s) == parse_time_signature(r)),
        "ci": ("instruments", lambda s, r: parse_instruments(r) <= s.instruments()),
    }
    res = ControlResult()
    for metric, (fld, hit) in checks.items():
        n_hit = n_eval = n_skip = 0
        for score, ref in zip(generated, references):
            value = ref.get(fld)
            if _missing(value):
                n_skip += 1
                continue
            n_eval += 1
            n_hit += bool(hit(score, value))
        res.hits[metric] = n_hit
        res.evaluated[metric] = n_eval
        res.excluded[metric] = n_skip
        res.ratios[metric] = n_hit / n_eval if n_eval else float("nan")
    return res
