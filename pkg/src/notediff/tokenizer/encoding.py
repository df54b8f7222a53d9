"""Score <-> K-attribute note sequences."""
from __future__ import annotations

import bisect
import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .chords import chord_windows
from .grid import MeasureGrid
from .score import DRUMS, Note, Score, Track
from .vocab import ATTRIBUTES, CONTINUATION, K, NEW_BEAT, NEW_MEASURE, AttributeVocab


class NoteEvent(NamedTuple):
    type: int
    beat: int
    chord: int
    tempo: int
    instrument: int
    pitch: int
    duration: int
    velocity: int


@dataclass
class ScoreMeta:
    """Structure that the note attributes do not carry.

    ``bar_skips`` maps a token row to the number of empty measures skipped
    right before it; rows absent from the map advance one measure on
    ``NEW_MEASURE``.
    """

    ticks_per_quarter: int = 480
    time_signatures: list[tuple[int, int, int]] = field(default_factory=lambda: [(0, 4, 4)])
    bar_skips: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"ticks_per_quarter": self.ticks_per_quarter,
                "time_signatures": [list(s) for s in self.time_signatures],
                "bar_skips": {str(k): v for k, v in sorted(self.bar_skips.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreMeta":
        return cls(int(d["ticks_per_quarter"]),
                   [tuple(int(x) for x in s) for s in d["time_signatures"]],
                   {int(k): int(v) for k, v in d.get("bar_skips", {}).items()})


@dataclass
class Encoding:
    tokens: np.ndarray
    meta: ScoreMeta
    clipped: Counter = field(default_factory=Counter)

    def events(self) -> list[NoteEvent]:
        return [NoteEvent(*map(int, row)) for row in self.tokens]

    def __len__(self):
        return len(self.tokens)


def _instrument_notes(score: Score):
    return [(track.instrument, n) for track in score.tracks for n in track.notes]


def _sort_key(grid, tpq):
    def key(item):
        inst, n = item
        return (grid.to_units(n.onset, tpq), inst, n.pitch, n.duration, n.velocity, n.onset)
    return key


def ordered_notes(score: Score, vocab: AttributeVocab) -> list[tuple[int, Note]]:
    """Notes in encoding order: (quantized onset, instrument, pitch)."""
    return sorted(_instrument_notes(score), key=_sort_key(vocab.grid, score.ticks_per_quarter))


def _measures(signatures, tpq, grid) -> MeasureGrid:
    return MeasureGrid([(grid.to_units(t, tpq), n, d) for t, n, d in signatures], grid)


def encode(score: Score, vocab: AttributeVocab) -> Encoding:
    """Encode a score as ``(n_notes + 1, K)`` indices, starting with the all-zero note."""
    grid = vocab.grid
    tpq = score.ticks_per_quarter
    measures = _measures(score.time_signatures, tpq, grid)
    windows = chord_windows(score, grid, measures)
    chord_table = vocab["chord"]
    tempo_ticks = [t for t, _ in score.tempo_map]
    beat_limit = vocab.beat_positions
    dur_top = grid.duration_edges()[-1]
    clipped: Counter = Counter()
    skips: dict[int, int] = {}

    rows = [vocab.initial_note()]
    prev_measure, prev_onset = -1, None
    for row, (inst, n) in enumerate(ordered_notes(score, vocab), start=1):
        q = grid.to_units(n.onset, tpq)
        m = measures.locate(q)
        beat = q - measures.start(m)
        if m > prev_measure:
            kind = NEW_MEASURE
            if m > prev_measure + 1:
                skips[row] = m - prev_measure - 1
        elif q > prev_onset:
            kind = NEW_BEAT
        else:
            kind = CONTINUATION
        prev_measure, prev_onset = m, q

        if beat >= beat_limit:
            clipped["beat"] += 1
            beat = beat_limit - 1
        half = 1 if 2 * (q - measures.start(m)) >= measures.length(m) else 0
        chord = chord_table.index(windows[2 * m + half][1])

        bpm = score.tempo_map[max(0, bisect.bisect_right(tempo_ticks, n.onset) - 1)][1]
        if not grid.tempo_min <= bpm <= grid.tempo_max:
            clipped["tempo"] += 1
        d_units = n.duration * grid.subdivisions / tpq
        if d_units > dur_top:
            clipped["duration"] += 1
        rows.append(np.array([kind, beat, chord, grid.tempo_bin(bpm), inst, n.pitch,
                              grid.duration_bin(d_units), grid.velocity_bin(n.velocity)]))

    meta = ScoreMeta(tpq, [tuple(s) for s in score.time_signatures], skips)
    return Encoding(np.array(rows, dtype=np.int64).reshape(-1, K), meta, clipped)


def check_tokens(tokens: np.ndarray, vocab: AttributeVocab) -> None:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != K:
        raise ValueError(f"expected (n, {K}) token array, got shape {tokens.shape}")
    bad = tokens >= vocab.mask_ids
    if bad.any():
        r, k = map(int, np.argwhere(bad)[0])
        what = "undecoded attribute" if tokens[r, k] == vocab.mask_ids[k] else "invalid index"
        raise ValueError(f"{what}: row {r}, {ATTRIBUTES[k]} = {int(tokens[r, k])}")
    if (tokens < 0).any():
        raise ValueError("negative token index")


def decode_notes(tokens, vocab: AttributeVocab, meta: ScoreMeta | None = None):
    """Decode rows after the initial note into ``(instrument, Note, bpm)`` in token order."""
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, K)
    check_tokens(tokens, vocab)
    meta = meta or ScoreMeta()
    grid = vocab.grid
    tpq = meta.ticks_per_quarter
    measures = _measures(meta.time_signatures, tpq, grid)
    out = []
    m = -1
    for row in range(1, len(tokens)):
        kind, beat, _, tempo, inst, pitch, dur, vel = (int(x) for x in tokens[row])
        if kind == NEW_MEASURE:
            m += 1 + meta.bar_skips.get(row, 0)
        m = max(m, 0)
        onset = grid.to_ticks(measures.start(m) + beat, tpq)
        duration = max(1, grid.to_ticks(grid.duration_units[dur], tpq))
        out.append((inst, Note(onset, pitch, duration, grid.velocity_value(vel)),
                    grid.tempo_value(tempo)))
    return out


def decode(tokens, vocab: AttributeVocab, meta: ScoreMeta | None = None) -> Score:
    """Invert :func:`encode`. The first row is taken to be the initial note."""
    if isinstance(tokens, Encoding):
        meta = meta or tokens.meta
        tokens = tokens.tokens
    meta = meta or ScoreMeta()
    decoded = decode_notes(tokens, vocab, meta)
    by_inst: dict[int, list[Note]] = {}
    tempo_changes: dict[int, float] = {}
    for inst, note, bpm in decoded:
        by_inst.setdefault(inst, []).append(note)
        tempo_changes.setdefault(note.onset, bpm)
    tempo_map = []
    for tick in sorted(tempo_changes):
        if not tempo_map or tempo_map[-1][1] != tempo_changes[tick]:
            tempo_map.append((tick, tempo_changes[tick]))
    if tempo_map:
        tempo_map[0] = (0, tempo_map[0][1])
    else:
        tempo_map = [(0, 120.0)]
    tracks = [Track(program=0 if inst == DRUMS else inst, is_drum=inst == DRUMS,
                    notes=sorted(notes)) for inst, notes in sorted(by_inst.items())]
    return Score(meta.ticks_per_quarter, tempo_map, list(meta.time_signatures), tracks)


# --- round trip ---------------------------------------------------------

def roundtrip_violations(score: Score, vocab: AttributeVocab) -> list[str]:
    """Notes whose decoded form leaves the quantization tolerance.

    Pitch and instrument must match exactly. Onsets may move by half a grid
    unit, durations by the worst-case in-bin error of their bin, velocity by
    half a bin; each timing bound gets half a tick for integer rounding.
    """
    grid = vocab.grid
    enc = encode(score, vocab)
    source = ordered_notes(score, vocab)
    decoded = decode_notes(enc.tokens, vocab, enc.meta)
    unit = grid.unit_ticks(score.ticks_per_quarter)
    problems = []
    if len(source) != len(decoded):
        return [f"note count {len(source)} -> {len(decoded)}"]
    for i, ((inst, n), (inst2, d, _)) in enumerate(zip(source, decoded)):
        dur_bin = int(enc.tokens[i + 1, ATTRIBUTES.index("duration")])
        checks = (
            ("instrument", inst != inst2),
            ("pitch", n.pitch != d.pitch),
            ("onset", abs(n.onset - d.onset) > unit / 2 + 0.5),
            ("duration", abs(n.duration - d.duration) > grid.duration_tolerance(dur_bin) * unit + 0.5),
            ("velocity", abs(n.velocity - d.velocity) > grid.velocity_width / 2),
        )
        for name, failed in checks:
            if failed:
                problems.append(f"note {i}: {name} {n} -> {d} (instrument {inst}->{inst2})")
    return problems


# --- corpus filtering ---------------------------------------------------

@dataclass
class FilterReport:
    rows: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def kept(self) -> int:
        return sum(1 for r in self.rows if r[2] == "kept")

    @property
    def removed(self) -> int:
        return len(self.rows) - self.kept

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "n_notes", "status"])
        w.writerows(self.rows)
        w.writerow(["TOTAL", len(self.rows), f"kept={self.kept} removed={self.removed}"])
        return buf.getvalue()


def filter_corpus(corpus, names=None):
    """Drop drum-only scores. Returns ``(kept_scores, report)``."""
    names = list(names) if names is not None else [str(i) for i in range(len(corpus))]
    kept, report = [], FilterReport()
    for name, score in zip(names, corpus):
        drum_only = score.is_drum_only()
        report.rows.append((name, score.n_notes, "removed:drum-only" if drum_only else "kept"))
        if not drum_only:
            kept.append(score)
    return kept, report


def clip_report_csv(entries) -> str:
    """CSV of per-file clipping counters; ``entries`` is ``[(name, Counter), ...]``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "beat", "tempo", "duration"])
    for name, counts in entries:
        w.writerow([name, counts.get("beat", 0), counts.get("tempo", 0), counts.get("duration", 0)])
    return buf.getvalue()


# --- token index files --------------------------------------------------

def tokens_to_text(tokens) -> str:
    return "".join(" ".join(str(int(x)) for x in row) + "\n" for row in np.asarray(tokens))


def tokens_from_text(text: str) -> np.ndarray:
    rows = [list(map(int, line.split())) for line in text.splitlines() if line.strip()]
    for i, r in enumerate(rows):
        if len(r) != K:
            raise ValueError(f"line {i + 1}: expected {K} indices, got {len(r)}")
    return np.array(rows, dtype=np.int64).reshape(-1, K)
