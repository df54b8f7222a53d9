"""Forward masking, step-adjustable reverse decoding and sequence generation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad
from .tokenizer.encoding import NoteEvent
from .tokenizer.vocab import ATTRIBUTES


class Status(enum.IntEnum):
    MASKED = 0
    COMMITTED = 1
    CLAMPED = 2


@dataclass
class MaskState:
    """Per-attribute status plus diffusion time. ``values`` is -1 where masked."""

    values: np.ndarray
    status: np.ndarray
    t: float
    p_mask: np.ndarray = field(default=None)

    @property
    def masked(self) -> np.ndarray:
        return self.status == Status.MASKED

    @property
    def n_masked(self) -> int:
        return int(self.masked.sum())

    def copy(self) -> "MaskState":
        return MaskState(self.values.copy(), self.status.copy(), self.t,
                         None if self.p_mask is None else self.p_mask.copy())

    def inputs(self, mask_ids) -> np.ndarray:
        return np.where(self.masked, mask_ids, self.values)


def forward_mask(note, t: float, rng: np.random.Generator) -> MaskState:
    """Keep each attribute with probability ``1 - t``, else mask it."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    note = np.asarray(note, dtype=np.int64)
    masked = rng.random(note.shape) < t
    status = np.where(masked, Status.MASKED, Status.COMMITTED).astype(np.int8)
    values = np.where(masked, -1, note)
    return MaskState(values, status, float(t), np.full(note.shape, float(t)))


def num_tokens_to_decode(num_m: int, T_steps: int, t: int) -> int:
    """Attributes to commit at step ``t`` of ``T_steps`` so all ``num_m`` finish evenly."""
    if T_steps < 1:
        raise ValueError("number of decoding steps must be >= 1")
    if num_m < 0 or not 0 <= t < T_steps:
        raise ValueError(f"invalid schedule query num_m={num_m}, t={t}, T={T_steps}")
    base, extra = divmod(num_m, T_steps)
    return base + 1 if t < extra else base


def schedule(num_m: int, T_steps: int) -> list[int]:
    return [num_tokens_to_decode(num_m, T_steps, t) for t in range(T_steps)]


def resolve_clamps(clamps, vocab_sizes) -> dict[int, int]:
    """Normalise ``{attribute name or index: value index}`` and validate it."""
    out = {}
    for key, value in (clamps or {}).items():
        if isinstance(key, str):
            if key not in ATTRIBUTES:
                raise KeyError(f"unknown attribute {key!r}; expected one of {ATTRIBUTES}")
            k = ATTRIBUTES.index(key)
        else:
            k = int(key)
            if not 0 <= k < len(vocab_sizes):
                raise KeyError(f"unknown attribute index {k}")
        value = int(value)
        if not 0 <= value < vocab_sizes[k] - 2:
            raise ValueError(f"clamp value {value} invalid for attribute {k}")
        out[k] = value
    return out


def _content_probs(logits: list[np.ndarray], vocab_sizes) -> list[np.ndarray]:
    probs = []
    for lg, v in zip(logits, vocab_sizes):
        z = np.asarray(lg, dtype=np.float64)[: v - 2]  # never emit mask/pad
        z = z - z.max()
        e = np.exp(z)
        probs.append(e / e.sum())
    return probs


def decode_note(model, condition, steps: int, clamps=None, rng=None, mode: str = "argmax",
                strategy: str = "confidence", trace: list | None = None) -> NoteEvent:
    """Recover all attributes of one note from a fully masked start in ``steps`` passes.

    Clamped attributes are committed before the first pass and count toward
    neither the schedule nor the output choice. Each pass calls the denoiser
    once, commits the scheduled number of masked attributes (highest
    confidence first, ties to the lower attribute index) and leaves the rest
    masked. ``strategy="random"`` instead unmasks a uniformly random subset.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    if strategy not in ("confidence", "random"):
        raise ValueError(f"unknown strategy {strategy!r}")
    sizes = model.config.vocab_sizes
    k = len(sizes)
    clamps = resolve_clamps(clamps, sizes)
    if rng is None:
        rng = np.random.default_rng(0)

    state = MaskState(np.full(k, -1, dtype=np.int64), np.full(k, Status.MASKED, dtype=np.int8), 1.0)
    for a, v in clamps.items():
        state.values[a] = v
        state.status[a] = Status.CLAMPED
    num_m = state.n_masked
    mask_ids = model.mask_ids
    if condition.ndim == 1:
        condition = condition.reshape(1, -1)
    if trace is not None:
        trace.append(state.copy())

    for step in range(steps):
        n_commit = num_tokens_to_decode(num_m, steps, step)
        state.t = state.n_masked / k
        with no_grad():
            logits = model.denoise(state.inputs(mask_ids)[None], condition, [state.t])
        probs = _content_probs([lg.data[0] for lg in logits], sizes)
        masked_idx = np.flatnonzero(state.masked)
        if n_commit == 0 or masked_idx.size == 0:
            if trace is not None:
                trace.append(state.copy())
            continue
        cand = np.empty(k, dtype=np.int64)
        conf = np.zeros(k)
        for a in masked_idx:
            p = probs[a]
            cand[a] = int(np.argmax(p)) if mode == "argmax" else int(rng.choice(len(p), p=p))
            conf[a] = p[cand[a]]
        if strategy == "confidence":
            order = sorted(masked_idx, key=lambda a: (-conf[a], a))
            chosen = order[:n_commit]
        else:
            chosen = rng.choice(masked_idx, size=n_commit, replace=False)
        for a in chosen:
            state.values[a] = cand[a]
            state.status[a] = Status.COMMITTED
        if trace is not None:
            trace.append(state.copy())

    if state.n_masked:
        raise RuntimeError("decode finished with masked attributes")
    return NoteEvent(*(int(v) for v in state.values))


def generate_sequence(model, n_notes: int, steps: int = 8, clamps=None, note_clamps=None,
                      condition=None, rng=None, mode: str = "argmax",
                      strategy: str = "confidence", eos_type: int | None = None,
                      traces: list | None = None) -> list[NoteEvent]:
    """Autoregressively generate ``n_notes`` notes.

    ``clamps`` applies to every note; ``note_clamps`` maps a note index to
    extra clamps for that note only (e.g. a full opening note).
    """
    if n_notes < 0:
        raise ValueError("n_notes must be >= 0")
    n_cond = 0 if condition is None else int(np.size(condition))
    if n_notes + n_cond > model.config.max_notes:
        raise ValueError(f"{n_notes} notes exceed max_notes={model.config.max_notes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    k = model.config.n_attributes
    tokens = [np.zeros(k, dtype=np.int64)]
    out = []
    note_clamps = note_clamps or {}
    for m in range(n_notes):
        with no_grad():
            latents, _ = model.generate_latents(np.array(tokens)[None], condition)
            z_next = latents[0, len(tokens) - 1]
            z_first = latents[0, 0]
            zhat = model.ciem(z_next, z_first)
        merged = dict(resolve_clamps(clamps, model.config.vocab_sizes))
        merged.update(resolve_clamps(note_clamps.get(m), model.config.vocab_sizes))
        trace = [] if traces is not None else None
        note = decode_note(model, zhat, steps, merged, rng, mode, strategy, trace)
        if traces is not None:
            traces.append(trace)
        out.append(note)
        tokens.append(np.array(note, dtype=np.int64))
        if eos_type is not None and note.type == eos_type:
            break
    return out
