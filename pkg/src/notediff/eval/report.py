"""Per-piece metric table plus corpus summary."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControlResult, control_metrics
from .metrics import pitch_class_entropy, pitch_entropy, scale_consistency

PIECE_FIELDS = ["name", "n_notes", "sc", "pe_bits", "pce_bits"]
CONTROL_FIELDS = ["tbt", "ck", "cts", "ci"]


@dataclass
class MetricReport:
    pieces: list[dict] = field(default_factory=list)
    means: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    control: ControlResult | None = None

    @property
    def n_pieces(self) -> int:
        return len(self.pieces)

    def summary_row(self) -> dict:
        row = {"name": "__summary__", "n_notes": sum(p["n_notes"] for p in self.pieces)}
        row.update({"sc": self.means["sc"], "pe_bits": self.means["pe"], "pce_bits": self.means["pce"]})
        return row

    def to_csv(self, path) -> Path:
        """Per-piece rows, then a summary row; control ratios go in extra columns of the summary."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = PIECE_FIELDS + ([f for f in CONTROL_FIELDS] if self.control else [])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, restval="")
            w.writeheader()
            for p in self.pieces:
                w.writerow({k: _fmt(v) for k, v in p.items() if k in fields})
            summary = self.summary_row()
            if self.control:
                summary.update(self.control.ratios)
            w.writerow({k: _fmt(v) for k, v in summary.items()})
        return path

    def counts_csv(self, path) -> Path:
        """Skipped / evaluated / excluded counts per metric."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "evaluated", "skipped_or_excluded", "hits"])
            for m in ("sc", "pe", "pce"):
                w.writerow([m, self.n_pieces - self.skipped[m], self.skipped[m], ""])
            if self.control:
                for m in CONTROL_FIELDS:
                    w.writerow([m, self.control.evaluated[m], self.control.excluded[m], self.control.hits[m]])
        return path


def _fmt(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6f}"
    return "" if v is None else v


def _mean(values) -> float:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else float("nan")


def evaluate(scores, names=None, references=None) -> MetricReport:
    """SC / PE / PCE per piece and their means, plus control ratios when references are given."""
    names = names or [f"piece{i}" for i in range(len(scores))]
    rep = MetricReport()
    for name, s in zip(names, scores):
        rep.pieces.append({"name": name, "n_notes": s.n_notes, "sc": scale_consistency(s),
                           "pe_bits": pitch_entropy(s), "pce_bits": pitch_class_entropy(s)})
    for key, col in (("sc", "sc"), ("pe", "pe_bits"), ("pce", "pce_bits")):
        rep.means[key] = _mean(p[col] for p in rep.pieces)
        rep.skipped[key] = sum(p[col] is None for p in rep.pieces)
    if references is not None:
        rep.control = control_metrics(scores, references)
    return rep
