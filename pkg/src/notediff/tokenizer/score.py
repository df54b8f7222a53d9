"""Plain score containers shared by the MIDI reader/writer and the encoder."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

DRUMS = 128
DEFAULT_TEMPO = 120.0
DEFAULT_TIME_SIGNATURE = (4, 4)


class Note(NamedTuple):
    onset: int
    pitch: int
    duration: int
    velocity: int


@dataclass
class Track:
    program: int
    is_drum: bool = False
    notes: list[Note] = field(default_factory=list)

    @property
    def instrument(self) -> int:
        return DRUMS if self.is_drum else self.program


@dataclass
class Score:
    ticks_per_quarter: int
    tempo_map: list[tuple[int, float]] = field(default_factory=lambda: [(0, DEFAULT_TEMPO)])
    time_signatures: list[tuple[int, int, int]] = field(
        default_factory=lambda: [(0, *DEFAULT_TIME_SIGNATURE)])
    tracks: list[Track] = field(default_factory=list)

    def __post_init__(self):
        if self.ticks_per_quarter <= 0:
            raise ValueError(f"ticks_per_quarter must be positive, got {self.ticks_per_quarter}")

    @property
    def n_notes(self) -> int:
        return sum(len(t.notes) for t in self.tracks)

    def is_drum_only(self) -> bool:
        has_notes = self.n_notes > 0
        return has_notes and all(t.is_drum for t in self.tracks if t.notes)

    def pitched_notes(self) -> list[Note]:
        return [n for t in self.tracks if not t.is_drum for n in t.notes]

    def instruments(self) -> set[int]:
        return {t.instrument for t in self.tracks if t.notes}

    def end_tick(self) -> int:
        return max((n.onset + n.duration for t in self.tracks for n in t.notes), default=0)

    def validate(self) -> None:
        for name, seq in (("tempo_map", self.tempo_map), ("time_signatures", self.time_signatures)):
            ticks = [e[0] for e in seq]
            if any(t < 0 for t in ticks) or ticks != sorted(ticks):
                raise ValueError(f"{name} ticks must be non-negative and non-decreasing")
        for track in self.tracks:
            if not (0 <= track.program <= 127):
                raise ValueError(f"program out of range: {track.program}")
            for n in track.notes:
                if n.onset < 0 or n.duration < 1:
                    raise ValueError(f"bad note timing: {n}")
                if not (0 <= n.pitch <= 127 and 0 <= n.velocity <= 127):
                    raise ValueError(f"bad note values: {n}")
