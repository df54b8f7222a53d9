"""Contrastive spread loss, masked weighted cross-entropy and their sum."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossBreakdown:
    l_cl: float
    l_ce: float
    total: float
    per_attribute: list[float] = field(default_factory=list)
    masked_ce: float = float("nan")  # unweighted mean NLL over masked attributes
    n_masked: int = 0

    def finite(self) -> bool:
        vals = [self.l_cl, self.l_ce, self.total, *self.per_attribute]
        return all(np.isfinite(v) for v in vals)


def contrastive_loss(h, tau: float) -> Tensor:
    """``-log mean_{i != j} exp(-(1 - cos(h_i, h_j)) / tau)`` over N >= 2 vectors (N, d)."""
    h = T.as_tensor(h)
    if h.ndim != 2 or h.shape[0] < 2:
        raise ValueError(f"contrastive_loss needs at least 2 vectors, got shape {h.shape}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = h.shape[0]
    cos = T.cosine_similarity(h.reshape(n, 1, -1), h.reshape(1, n, -1), axis=-1)
    sims = T.exp(T.scale(cos - 1.0, 1.0 / tau))
    off_diag = Tensor(1.0 - np.eye(n), dtype=sims.data.dtype)
    mean = T.scale(T.sum_(sims * off_diag), 1.0 / (n * (n - 1)))
    return -T.log(mean)


def masked_weighted_ce(logits, targets, mask, p_mask, reduction: str = "mean"):
    """Inverse-probability weighted CE over masked attributes.

    ``logits`` is a list of K tensors (N, V_k); ``targets``/``mask``/``p_mask``
    are (N, K). Unmasked attributes contribute exactly zero. Returns
    ``(loss, per_attribute, masked_nll_mean, n_masked)`` where the loss sums over
    attributes and averages (or sums) over the N notes.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    p_mask = np.broadcast_to(np.asarray(p_mask, dtype=np.float64), mask.shape)
    if (mask & (p_mask <= 0)).any():
        raise ValueError("masked attribute with p_mask = 0")
    n, k = targets.shape
    if len(logits) != k:
        raise ValueError(f"expected {k} logit heads, got {len(logits)}")
    weights = np.where(mask, 1.0 / np.where(mask, p_mask, 1.0), 0.0)
    norm = 1.0 / n if reduction == "mean" else 1.0
    total, per_attr = None, []
    nll_sum, n_masked = 0.0, int(mask.sum())
    for i, lg in enumerate(logits):
        if lg.ndim == 1:
            lg = lg.reshape(1, -1)
        logp = T.pick(T.log_softmax(lg, axis=-1), targets[:, i])
        w = Tensor(weights[:, i] * norm, dtype=logp.data.dtype)
        term = -T.sum_(logp * w)
        per_attr.append(float(term.data))
        nll_sum += float(-(logp.data * mask[:, i]).sum())
        total = term if total is None else total + term
    masked_nll = nll_sum / n_masked if n_masked else 0.0
    return total, per_attr, masked_nll, n_masked


def total_loss(l_cl, l_ce, lam: float):
    """``lam * l_cl + l_ce``; works on floats and tensors alike."""
    if isinstance(l_cl, Tensor) or isinstance(l_ce, Tensor):
        return T.add(T.scale(l_cl, lam), l_ce)
    return lam * l_cl + l_ce
