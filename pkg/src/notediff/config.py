"""Model and training configuration, loadable from JSON key-value files."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

K = 8


@dataclass
class ModelConfig:
    vocab_sizes: list[int] = field(default_factory=list)
    d: int = 128
    gen_layers: int = 4
    dec_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_notes: int = 1024
    tau: float = 0.5
    lam: float = 0.1
    mlsdes_layer: int | None = None
    cond_vocab: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mlsdes_layer is None:
            self.mlsdes_layer = self.gen_layers // 2
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if not 0 <= self.mlsdes_layer < self.gen_layers:
            raise ValueError(f"mlsdes_layer must be in [0, {self.gen_layers}), got {self.mlsdes_layer}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        self.vocab_sizes = [int(v) for v in self.vocab_sizes]

    @property
    def n_attributes(self) -> int:
        return len(self.vocab_sizes)


@dataclass
class TrainConfig:
    max_lr: float = 3e-4
    warmup_frac: float = 0.05
    min_lr_frac: float = 0.1
    grad_clip: float = 1.0
    batch_size: int = 8
    max_steps: int = 2000
    max_len: int = 256
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0
    grad_accum: int = 1
    log_every: int = 1

    def __post_init__(self):
        if self.max_lr < 0:
            raise ValueError("max_lr must be non-negative")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")


def _from_dict(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def model_config_from_dict(d: dict) -> ModelConfig:
    return _from_dict(ModelConfig, d)


def train_config_from_dict(d: dict) -> TrainConfig:
    return _from_dict(TrainConfig, d)


def load_config(path) -> tuple[dict, dict]:
    """Read ``{"model": {...}, "train": {...}}`` (either section optional)."""
    doc = json.loads(Path(path).read_text())
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return dict(doc.get("model", {})), dict(doc.get("train", {}))


def dump(obj) -> dict:
    return asdict(obj)
