"""Quantization grids: onset/beat units, duration, velocity and tempo bins."""
from __future__ import annotations

import bisect
from dataclasses import asdict, dataclass, field

import numpy as np


def _default_durations() -> tuple[int, ...]:
    # in grid units (1/12 quarter = a 48th note); coarser spacing for longer values
    reps = list(range(1, 25))
    reps += list(range(26, 49, 2))
    reps += list(range(51, 73, 3))
    reps += list(range(76, 97, 4))
    reps += list(range(102, 145, 6))
    reps += list(range(152, 193, 8))
    return tuple(reps)


DEFAULT_DURATIONS = _default_durations()
assert len(DEFAULT_DURATIONS) == 64 and DEFAULT_DURATIONS[-1] == 192


@dataclass(frozen=True)
class GridConfig:
    subdivisions: int = 12
    duration_units: tuple[int, ...] = field(default=DEFAULT_DURATIONS)
    velocity_bins: int = 32
    tempo_bins: int = 32
    tempo_min: float = 20.0
    tempo_max: float = 240.0
    min_beat_positions: int = 48
    max_beat_positions: int = 192

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_units"] = list(self.duration_units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        d = dict(d)
        if "duration_units" in d:
            d["duration_units"] = tuple(int(x) for x in d["duration_units"])
        return cls(**d)

    # --- timing -------------------------------------------------------
    def unit_ticks(self, tpq: int) -> float:
        return tpq / self.subdivisions

    def to_units(self, tick: float, tpq: int) -> int:
        return int(np.floor(tick * self.subdivisions / tpq + 0.5))

    def to_ticks(self, units: float, tpq: int) -> int:
        return int(np.floor(units * tpq / self.subdivisions + 0.5))

    def measure_units(self, num: int, den: int) -> int:
        return max(1, round(num * 4 * self.subdivisions / den))

    # --- duration -----------------------------------------------------
    def duration_edges(self) -> np.ndarray:
        reps = np.asarray(self.duration_units, dtype=float)
        mids = (reps[1:] + reps[:-1]) / 2
        top = reps[-1] + (reps[-1] - reps[-2]) / 2
        return np.concatenate([[0.0], mids, [top]])

    def duration_bin(self, units: float) -> int:
        mids = self.duration_edges()[1:-1]
        return int(np.searchsorted(mids, units, side="left"))

    def duration_tolerance(self, index: int) -> float:
        """Worst-case in-bin error (grid units) for a duration bin."""
        edges = self.duration_edges()
        rep = self.duration_units[index]
        return max(rep - edges[index], edges[index + 1] - rep)

    # --- velocity -----------------------------------------------------
    @property
    def velocity_width(self) -> int:
        return 128 // self.velocity_bins

    def velocity_bin(self, velocity: int) -> int:
        return min(self.velocity_bins - 1, max(0, velocity) // self.velocity_width)

    def velocity_value(self, index: int) -> int:
        return index * self.velocity_width + self.velocity_width // 2

    # --- tempo --------------------------------------------------------
    def tempo_edges(self) -> np.ndarray:
        return np.geomspace(self.tempo_min, self.tempo_max, self.tempo_bins + 1)

    def tempo_bin(self, bpm: float) -> int:
        idx = int(np.searchsorted(self.tempo_edges(), bpm, side="right")) - 1
        return min(self.tempo_bins - 1, max(0, idx))

    def tempo_value(self, index: int) -> float:
        edges = self.tempo_edges()
        return round(float(np.sqrt(edges[index] * edges[index + 1])), 2)


class MeasureGrid:
    """Measure start positions (grid units) derived from a time-signature map.

    A time-signature change that falls inside a measure starts a new measure.
    Measures are generated lazily so arbitrary indices can be requested.
    """

    def __init__(self, signatures_units: list[tuple[int, int, int]], grid: GridConfig):
        sigs = sorted(signatures_units, key=lambda s: s[0]) or [(0, 4, 4)]
        if sigs[0][0] > 0:
            sigs.insert(0, (0, 4, 4))
        self._sigs = sigs
        self._grid = grid
        self.starts: list[int] = [0]
        self.lengths: list[int] = []
        self._sig_idx = 0

    def _extend(self) -> None:
        pos = self.starts[-1]
        while self._sig_idx + 1 < len(self._sigs) and self._sigs[self._sig_idx + 1][0] <= pos:
            self._sig_idx += 1
        _, num, den = self._sigs[self._sig_idx]
        length = self._grid.measure_units(num, den)
        nxt = pos + length
        if self._sig_idx + 1 < len(self._sigs):
            change = self._sigs[self._sig_idx + 1][0]
            if pos < change < nxt:
                nxt = change
        self.lengths.append(nxt - pos)
        self.starts.append(nxt)

    def start(self, index: int) -> int:
        while len(self.lengths) <= index:
            self._extend()
        return self.starts[index]

    def length(self, index: int) -> int:
        self.start(index)
        return self.lengths[index]

    def locate(self, units: int) -> int:
        """Index of the measure containing ``units``."""
        while self.starts[-1] <= units:
            self._extend()
        return bisect.bisect_right(self.starts, units) - 1
