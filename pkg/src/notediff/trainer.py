"""Desk-scale teacher-forced training, optimizer and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig, model_config_from_dict, train_config_from_dict
from .losses import LossBreakdown, contrastive_loss, masked_weighted_ce, total_loss
from .model import NoteModel
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# --- batching -------------------------------------------------------------

def pad_batch(sequences, pad_ids) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad (n_i, K) sequences into (B, max_n, K) plus lengths."""
    lengths = np.array([len(s) for s in sequences])
    out = np.tile(np.asarray(pad_ids, dtype=np.int64), (len(sequences), lengths.max(), 1))
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
    return out, lengths


def crop(sequence: np.ndarray, max_len: int, rng) -> np.ndarray:
    """Keep the initial note and a random window of ``max_len - 1`` following notes."""
    if len(sequence) <= max_len:
        return sequence
    start = 1 + int(rng.integers(0, len(sequence) - max_len + 1))
    return np.concatenate([sequence[:1], sequence[start:start + max_len - 1]])


def draw_masks(targets: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    """One t ~ U(0, 1] per note; each attribute masked independently with prob t."""
    n, k = targets.shape
    t = 1.0 - rng.random(n)
    mask = rng.random((n, k)) < t[:, None]
    return mask, np.repeat(t[:, None], k, axis=1)


def loss_terms(model: NoteModel, tokens: np.ndarray, lengths: np.ndarray,
               mask: np.ndarray, p_mask: np.ndarray, condition=None):
    """Teacher-forced forward over a padded batch.

    Every valid position j predicts note j + 1. ``mask``/``p_mask`` are
    (n_targets, K) in row-major (sequence, position) order of the targets.
    Returns ``(l_cl, l_ce, per_attribute, masked_ce, n_masked)`` with the two
    losses as tensors; ``l_cl`` is a constant zero for a single sequence.
    """
    cfg = model.config
    B, M, K = tokens.shape
    latents, hidden = model.generate_latents(tokens, condition)
    d = cfg.d
    b_idx, j_idx = np.nonzero(np.arange(M - 1)[None, :] < (lengths[:, None] - 1))
    flat = latents.reshape(B * M, d)
    z_next = flat[b_idx * M + j_idx]
    z_first = flat[b_idx * M]
    zhat = model.ciem(z_next, z_first)
    targets = tokens[b_idx, j_idx + 1]
    masked_input = np.where(mask, model.mask_ids[None, :], targets)
    logits = model.denoise(masked_input, zhat, p_mask[:, 0])
    l_ce, per_attr, masked_ce, n_masked = masked_weighted_ce(logits, targets, mask, p_mask)

    if B >= 2:
        # sample representation: mean of the intermediate states over each sequence's valid notes
        valid = (np.arange(M)[None, :] < lengths[:, None]).astype(hidden.data.dtype)
        weights = Tensor((valid / valid.sum(axis=1, keepdims=True))[..., None], dtype=hidden.data.dtype)
        pooled = T.sum_(hidden * weights, axis=1)
        l_cl = contrastive_loss(pooled, cfg.tau)
    else:
        l_cl = Tensor(0.0, dtype=l_ce.data.dtype)
    return l_cl, l_ce, per_attr, masked_ce, n_masked


def compute_loss(model: NoteModel, tokens: np.ndarray, lengths: np.ndarray,
                 mask: np.ndarray, p_mask: np.ndarray, condition=None):
    """``(total_tensor, LossBreakdown)`` for one batch; see :func:`loss_terms`."""
    l_cl, l_ce, per_attr, masked_ce, n_masked = loss_terms(model, tokens, lengths, mask, p_mask, condition)
    total = total_loss(l_cl, l_ce, model.config.lam)
    breakdown = LossBreakdown(float(l_cl.data), float(l_ce.data), float(total.data), per_attr,
                              masked_ce, n_masked)
    return total, breakdown


# --- optimizer --------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if p.data.ndim >= 2 and cfg.weight_decay:
                p.data -= p.data.dtype.type(lr * cfg.weight_decay) * p.data
            update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
            p.data -= (lr * update).astype(p.data.dtype, copy=False)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup then cosine decay to ``min_lr_frac * max_lr``."""
    warmup = max(1, int(round(cfg.warmup_frac * cfg.max_steps)))
    if step < warmup:
        return cfg.max_lr * (step + 1) / warmup
    span = max(1, cfg.max_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    floor = cfg.min_lr_frac * cfg.max_lr
    return floor + 0.5 * (cfg.max_lr - floor) * (1 + math.cos(math.pi * progress))


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm


# --- trainer ----------------------------------------------------------------

LOG_FIELDS = ["step", "lr", "total", "l_cl", "l_ce", "masked_ce", "grad_norm"]


class Trainer:
    def __init__(self, model: NoteModel, sequences, cfg: TrainConfig, attribute_names=None):
        if not sequences:
            raise ValueError("no training sequences")
        self.model = model
        self.sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.optimizer = AdamW(model.named_parameters(), cfg)
        self.step = 0
        self.history: list[dict] = []
        self.attribute_names = list(attribute_names or [f"attr{k}" for k in range(model.config.n_attributes)])
        self.grad_seen: dict[str, np.ndarray] = {}

    def sample_batch(self):
        n = len(self.sequences)
        bs = min(self.cfg.batch_size, n)
        idx = np.sort(self.rng.choice(n, size=bs, replace=False)) if bs < n else np.arange(n)
        seqs = [crop(self.sequences[i], self.cfg.max_len, self.rng) for i in idx]
        tokens, lengths = pad_batch(seqs, self.model.pad_ids)
        n_targets = int((lengths - 1).sum())
        targets_dummy = np.zeros((n_targets, tokens.shape[2]), dtype=np.int64)
        mask, p_mask = draw_masks(targets_dummy, self.rng)
        return tokens, lengths, mask, p_mask

    def train_step(self, batch=None, track_grads: bool = False) -> LossBreakdown:
        tokens, lengths, mask, p_mask = batch if batch is not None else self.sample_batch()
        params = self.model.parameters()
        self.model.zero_grad()
        total, br = compute_loss(self.model, tokens, lengths, mask, p_mask)
        lr = lr_at(self.step, self.cfg)
        if not br.finite():
            T.clear_record()
            raise TrainingDiverged(f"non-finite loss at step {self.step}: lr={lr:.3g} "
                                   f"breakdown={asdict(br)}")
        T.backward(total)
        norms = {n: float(np.linalg.norm(p.grad)) for n, p in self.model.named_parameters()
                 if p.grad is not None}
        if not all(np.isfinite(v) for v in norms.values()):
            bad = sorted(n for n, v in norms.items() if not np.isfinite(v))
            raise TrainingDiverged(f"non-finite gradients at step {self.step}: lr={lr:.3g} "
                                   f"params={bad[:5]}")
        if track_grads:
            for n, p in self.model.named_parameters():
                seen = self.grad_seen.setdefault(n, np.zeros(p.shape, dtype=bool))
                if p.grad is not None:
                    seen |= p.grad != 0
        gnorm = clip_grad_norm(params, self.cfg.grad_clip)
        self.optimizer.step(lr)
        row = {"step": self.step, "lr": lr, "total": br.total, "l_cl": br.l_cl, "l_ce": br.l_ce,
               "masked_ce": br.masked_ce, "grad_norm": gnorm}
        row.update({f"ce_{n}": v for n, v in zip(self.attribute_names, br.per_attribute)})
        self.history.append(row)
        self.step += 1
        return br

    def fit(self, steps: int | None = None, out_dir=None, on_step=None):
        steps = self.cfg.max_steps - self.step if steps is None else steps
        for _ in range(steps):
            br = self.train_step()
            if on_step is not None:
                on_step(self.step, br)
            every = self.cfg.checkpoint_every
            if out_dir is not None and every and self.step % every == 0:
                save_checkpoint(Path(out_dir) / f"step{self.step:07d}", self)
        return self.history

    def write_log(self, path) -> None:
        if not self.history:
            return
        fields = LOG_FIELDS + [f"ce_{n}" for n in self.attribute_names]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            for row in self.history:
                w.writerow({k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in row.items()})


# --- checkpoints ------------------------------------------------------------

def _pack(named_arrays):
    manifest, chunks, offset = [], [], 0
    for name, arr in named_arrays:
        data = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    return manifest, b"".join(chunks)


def _jsonable_rng(state):
    return json.loads(json.dumps(state, default=int))


def save_checkpoint(path, trainer: Trainer | None = None, model: NoteModel | None = None) -> None:
    """Write ``params.bin`` (little-endian float32) and ``manifest.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = model or trainer.model
    arrays = [(n, p.data) for n, p in model.named_parameters()]
    doc = {"model_config": asdict(model.config), "step": 0}
    if trainer is not None:
        opt = trainer.optimizer
        arrays += [(f"adam.m/{n}", opt.m[n]) for n, _ in opt.params]
        arrays += [(f"adam.v/{n}", opt.v[n]) for n, _ in opt.params]
        doc.update(step=trainer.step, adam_t=opt.t, train_config=asdict(trainer.cfg),
                   rng_state=_jsonable_rng(trainer.rng.bit_generator.state))
    manifest, blob = _pack(arrays)
    doc["tensors"] = manifest
    (path / "params.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _unpack(path):
    path = Path(path)
    doc = json.loads((path / "manifest.json").read_text())
    blob = (path / "params.bin").read_bytes()
    arrays = {}
    for entry in doc["tensors"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + 4 * n
        if end > len(blob):
            raise ValueError(f"checkpoint truncated at tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=n,
                                              offset=entry["offset"]).reshape(entry["shape"])
    return doc, arrays


def _assign(model: NoteModel, arrays) -> None:
    for name, p in model.named_parameters():
        if name not in arrays:
            raise ValueError(f"checkpoint is missing tensor {name}")
        src = arrays[name]
        if tuple(src.shape) != p.shape:
            raise ValueError(f"shape mismatch for tensor {name}: checkpoint {tuple(src.shape)} "
                             f"vs model {p.shape}")
        p.data = np.array(src, dtype=p.data.dtype)


def load_model(path, model: NoteModel | None = None) -> NoteModel:
    doc, arrays = _unpack(path)
    if model is None:
        model = NoteModel(model_config_from_dict(doc["model_config"]))
    _assign(model, arrays)
    return model


def load_trainer(path, sequences, model: NoteModel | None = None, attribute_names=None) -> Trainer:
    doc, arrays = _unpack(path)
    model = load_model(path, model)
    trainer = Trainer(model, sequences, train_config_from_dict(doc["train_config"]), attribute_names)
    opt = trainer.optimizer
    for name, p in opt.params:
        for slot, store in (("m", opt.m), ("v", opt.v)):
            key = f"adam.{slot}/{name}"
            if key not in arrays:
                raise ValueError(f"checkpoint is missing tensor {key}")
            store[name] = np.array(arrays[key], dtype=p.data.dtype)
    opt.t = doc["adam_t"]
    trainer.step = doc["step"]
    trainer.rng.bit_generator.state = doc["rng_state"]
    return trainer


def build_model(vocab_sizes, overrides: dict | None = None) -> NoteModel:
    cfg = model_config_from_dict({**(overrides or {}), "vocab_sizes": list(vocab_sizes)})
    return NoteModel(cfg)


__all__ = ["AdamW", "Trainer", "TrainingDiverged", "build_model", "clip_grad_norm",
           "compute_loss", "global_grad_norm", "loss_terms", "load_model", "load_trainer", "lr_at",
           "pad_batch", "save_checkpoint", "ModelConfig"]
