"""Plug-in mutual information, normalised MI and conditional entropy between note attributes."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..tokenizer.vocab import ATTRIBUTES

log = logging.getLogger(__name__)

# row/column order and display names of the attribute tables
TABLE_ORDER = ("beat", "pitch", "velocity", "duration", "instrument", "chord", "tempo", "type")
TABLE_LABELS = {"beat": "Beat", "pitch": "Pitch", "velocity": "Velocity", "duration": "Duration",
                "instrument": "Instrument", "chord": "Chord", "tempo": "Tempo", "type": "Type"}


def _codes(column: np.ndarray) -> tuple[np.ndarray, int]:
    """Label-encode a column to 0..n-1."""
    uniq, inv = np.unique(column, return_inverse=True)
    return inv.ravel(), len(uniq)


def entropy(x) -> float:
    """Plug-in Shannon entropy in nats."""
    codes, n = _codes(np.asarray(x))
    if codes.size == 0:
        raise ValueError("entropy of an empty sample")
    p = np.bincount(codes, minlength=n) / codes.size
    p = p[p > 0]
    return float(max(0.0, -(p * np.log(p)).sum()))


def joint_counts(x, y) -> np.ndarray:
    cx, nx = _codes(np.asarray(x))
    cy, ny = _codes(np.asarray(y))
    if cx.size != cy.size:
        raise ValueError("samples differ in length")
    return np.bincount(cx * ny + cy, minlength=nx * ny).reshape(nx, ny)


def mutual_information_from_counts(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty joint table")
    p = counts / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = p[nz] / (px @ py)[nz]
    return float(max(0.0, (p[nz] * np.log(ratio)).sum()))


def mutual_information(x, y) -> float:
    """Plug-in I(X;Y) in nats."""
    return mutual_information_from_counts(joint_counts(x, y))


def normalized_mi(mi: float, hx: float, hy: float, same: bool = False) -> float:
    """I / sqrt(H(X) H(Y)); a constant variable gets 0 off-diagonal and 1 on the diagonal."""
    if same:
        return 1.0
    if hx <= 0 or hy <= 0:
        return 0.0
    return float(min(1.0, max(0.0, mi / np.sqrt(hx * hy))))


@dataclass
class MIMatrices:
    """K x K tables over ``labels``. ``cond[i, j]`` is H(labels[j] | labels[i])."""

    labels: list
    mi: np.ndarray
    nmi: np.ndarray
    entropy: np.ndarray
    cond: np.ndarray
    n_samples: int

    def _write(self, path: Path, matrix: np.ndarray, digits: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([""] + list(self.labels))
            for label, row in zip(self.labels, matrix):
                w.writerow([label] + [f"{v:.{digits}f}" for v in row])

    def to_csv(self, out_dir, digits: int = 4) -> dict[str, Path]:
        """Write mi_nats.csv, nmi.csv, cond_entropy_nats.csv and entropy_nats.csv."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"mi": out_dir / "mi_nats.csv", "nmi": out_dir / "nmi.csv",
                 "cond": out_dir / "cond_entropy_nats.csv", "entropy": out_dir / "entropy_nats.csv"}
        self._write(paths["mi"], self.mi, digits)
        self._write(paths["nmi"], self.nmi, digits)
        self._write(paths["cond"], self.cond, digits)
        with open(paths["entropy"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["attribute", "entropy_nats", "n_samples"])
            for label, h in zip(self.labels, self.entropy):
                w.writerow([label, f"{h:.{digits}f}", self.n_samples])
        return paths


def mutual_information_analysis(tokens, attributes=ATTRIBUTES, order=TABLE_ORDER,
                                labels=None) -> MIMatrices:
    """All-pairs plug-in MI over an (N, K) array of note attribute indices.

    ``attributes`` names the columns of ``tokens``; ``order`` picks and orders
    the rows of the output tables.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ValueError("need a non-empty (N, K) token array")
    if tokens.shape[1] != len(attributes):
        raise ValueError(f"{tokens.shape[1]} columns but {len(attributes)} attribute names")
    cols = [list(attributes).index(a) for a in order]
    labels = labels or [TABLE_LABELS.get(a, a) for a in order]
    k = len(cols)
    codes = [_codes(tokens[:, c]) for c in cols]
    n = tokens.shape[0]
    h = np.array([entropy(tokens[:, c]) for c in cols])
    mi = np.zeros((k, k))
    for i in range(k):
        mi[i, i] = h[i]
        for j in range(i + 1, k):
            (ci, ni), (cj, nj) = codes[i], codes[j]
            counts = np.bincount(ci * nj + cj, minlength=ni * nj).reshape(ni, nj)
            mi[i, j] = mi[j, i] = mutual_information_from_counts(counts)
    nmi = np.array([[normalized_mi(mi[i, j], h[i], h[j], i == j) for j in range(k)] for i in range(k)])
    constant = [labels[i] for i in range(k) if h[i] == 0]
    if constant:
        log.info("constant attributes %s: NMI set to 0 off-diagonal, 1 on the diagonal", constant)
    cond = h[None, :] - mi
    cond[np.abs(cond) < 1e-12] = 0.0
    return MIMatrices(list(labels), mi, nmi, h, cond, n)
