"""Per-attribute symbol tables with reserved mask and pad indices."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chords import CHORD_LABELS, parse_chord
from .grid import GridConfig, MeasureGrid
from .score import DRUMS, Score

ATTRIBUTES = ("type", "beat", "chord", "tempo", "instrument", "pitch", "duration", "velocity")
K = len(ATTRIBUTES)
TYPE_SYMBOLS = ("NEW_MEASURE", "NEW_BEAT", "CONTINUATION")
NEW_MEASURE, NEW_BEAT, CONTINUATION = range(3)

INSTRUMENT_ALIASES = {
    "piano": 0, "acoustic grand piano": 0, "bright piano": 1, "electric piano": 4,
    "harpsichord": 6, "celesta": 8, "glockenspiel": 9, "vibraphone": 11, "marimba": 12,
    "organ": 16, "church organ": 19, "accordion": 21, "harmonica": 22,
    "guitar": 24, "acoustic guitar": 24, "nylon guitar": 24, "steel guitar": 25,
    "electric guitar": 27, "clean guitar": 27, "overdriven guitar": 29, "distortion guitar": 30,
    "bass": 32, "acoustic bass": 32, "electric bass": 33, "fretless bass": 35, "synth bass": 38,
    "violin": 40, "viola": 41, "cello": 42, "contrabass": 43, "harp": 46, "timpani": 47,
    "strings": 48, "string ensemble": 48, "synth strings": 50, "choir": 52, "voice": 53,
    "trumpet": 56, "trombone": 57, "tuba": 58, "french horn": 60, "horn": 60, "brass": 61,
    "soprano sax": 64, "alto sax": 65, "sax": 65, "tenor sax": 66, "baritone sax": 67,
    "oboe": 68, "english horn": 69, "bassoon": 70, "clarinet": 71, "piccolo": 72,
    "flute": 73, "recorder": 74, "pan flute": 75, "shamisen": 106, "shanai": 111,
    "synth lead": 80, "lead": 80, "synth pad": 88, "pad": 88, "drums": DRUMS, "drum": DRUMS,
}


@dataclass(frozen=True)
class AttributeTable:
    name: str
    symbols: tuple[str, ...]

    @property
    def n_content(self) -> int:
        return len(self.symbols)

    @property
    def mask(self) -> int:
        return len(self.symbols)

    @property
    def pad(self) -> int:
        return len(self.symbols) + 1

    @property
    def size(self) -> int:
        return len(self.symbols) + 2

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"{symbol!r} is not a {self.name} symbol") from None


class AttributeVocab:
    """The K attribute tables plus the quantization grid used to build them.

    Content symbols occupy ``0..n-1``; ``n`` is the mask symbol and ``n+1``
    the pad symbol, for every attribute. The initial note is all zeros.
    """

    def __init__(self, tables: tuple[AttributeTable, ...], grid: GridConfig):
        if tuple(t.name for t in tables) != ATTRIBUTES:
            raise ValueError("attribute tables must follow the fixed attribute order")
        for t in tables:
            if len(set(t.symbols)) != len(t.symbols):
                raise ValueError(f"duplicate symbols in {t.name} table")
        self.tables = tuple(tables)
        self.grid = grid

    def __getitem__(self, name: str) -> AttributeTable:
        return self.tables[ATTRIBUTES.index(name)]

    def __eq__(self, other):
        return isinstance(other, AttributeVocab) and self.to_json() == other.to_json()

    @property
    def sizes(self) -> list[int]:
        return [t.size for t in self.tables]

    @property
    def mask_ids(self) -> np.ndarray:
        return np.array([t.mask for t in self.tables])

    @property
    def pad_ids(self) -> np.ndarray:
        return np.array([t.pad for t in self.tables])

    @property
    def beat_positions(self) -> int:
        return self["beat"].n_content

    def initial_note(self) -> np.ndarray:
        return np.zeros(K, dtype=np.int64)

    def parse_value(self, attribute: str, text: str) -> int:
        """Map a user-facing value (``Piano``, ``153``, ``C7``) to an index."""
        table = self[attribute]
        text = str(text).strip()
        g = self.grid
        if attribute == "type":
            return table.index(text.upper())
        if attribute == "chord":
            return table.index(parse_chord(text))
        if attribute == "instrument":
            key = text.lower()
            if key in INSTRUMENT_ALIASES:
                return INSTRUMENT_ALIASES[key]
            value = int(text)
            if not 0 <= value <= DRUMS:
                raise ValueError(f"instrument program out of range: {value}")
            return value
        if attribute == "tempo":
            return g.tempo_bin(float(text))
        if attribute == "velocity":
            return g.velocity_bin(int(text))
        if attribute == "duration":
            return g.duration_bin(float(text))
        value = int(text)
        if not 0 <= value < table.n_content:
            raise ValueError(f"{attribute} value out of range: {value}")
        return value

    def to_json(self) -> str:
        doc = {
            "attributes": [{"name": t.name, "symbols": list(t.symbols),
                            "mask": t.mask, "pad": t.pad} for t in self.tables],
            "grid": self.grid.to_dict(),
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AttributeVocab":
        doc = json.loads(text)
        tables = tuple(AttributeTable(a["name"], tuple(a["symbols"])) for a in doc["attributes"])
        return cls(tables, GridConfig.from_dict(doc["grid"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AttributeVocab":
        return cls.from_json(Path(path).read_text())


def make_vocab(grid: GridConfig | None = None, beat_positions: int | None = None) -> AttributeVocab:
    grid = grid or GridConfig()
    beats = beat_positions or grid.min_beat_positions
    tables = (
        AttributeTable("type", TYPE_SYMBOLS),
        AttributeTable("beat", tuple(str(i) for i in range(beats))),
        AttributeTable("chord", CHORD_LABELS),
        AttributeTable("tempo", tuple(f"{grid.tempo_value(i):.2f}" for i in range(grid.tempo_bins))),
        AttributeTable("instrument", tuple(str(i) for i in range(128)) + ("drums",)),
        AttributeTable("pitch", tuple(str(i) for i in range(128))),
        AttributeTable("duration", tuple(str(u) for u in grid.duration_units)),
        AttributeTable("velocity", tuple(str(grid.velocity_value(i)) for i in range(grid.velocity_bins))),
    )
    return AttributeVocab(tables, grid)


def build_vocab(corpus: list[Score], grid: GridConfig | None = None) -> AttributeVocab:
    """Build the attribute vocabulary for a corpus.

    Binned attributes always get every bin, so only the beat table depends on
    the corpus: it spans the longest measure seen (capped by the grid config).
    """
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    grid = grid or GridConfig()
    longest = grid.min_beat_positions
    for score in corpus:
        tpq = score.ticks_per_quarter
        sigs = [(grid.to_units(t, tpq), n, d) for t, n, d in score.time_signatures]
        measures = MeasureGrid(sigs, grid)
        end = grid.to_units(score.end_tick(), tpq)
        m = 0
        while True:
            longest = max(longest, measures.length(m))
            if measures.start(m + 1) > end:
                break
            m += 1
    return make_vocab(grid, min(longest, grid.max_beat_positions))
