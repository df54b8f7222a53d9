"""Parameter containers and transformer building blocks."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e9


class Module:
    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(6.0 / (d_in + d_out))  # xavier-uniform
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.weight = _param(rng.normal(0.0, 0.02, size=(n, d)))

    def __call__(self, indices):
        return T.embedding_lookup(self.weight, indices)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = _param(np.ones(d))
        self.bias = _param(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, query, memory, causal: bool = False, key_valid=None):
        """``query`` is (B, Lq, d), ``memory`` (B, Lk, d); returns (B, Lq, d)."""
        B, Lq, d = query.shape
        Lk = memory.shape[1]
        h, dh = self.heads, d // self.heads
        q = self.q(query).reshape(B, Lq, h, dh).transpose(0, 2, 1, 3)
        k = self.k(memory).reshape(B, Lk, h, dh).transpose(0, 2, 3, 1)
        v = self.v(memory).reshape(B, Lk, h, dh).transpose(0, 2, 1, 3)
        scores = T.scale(q @ k, 1.0 / math.sqrt(dh))
        bias = None
        if causal:
            if Lq != Lk:
                raise ValueError("causal attention needs equal query and key lengths")
            bias = np.triu(np.full((Lq, Lk), NEG_INF), 1)
        if key_valid is not None:
            kb = np.where(np.asarray(key_valid, bool), 0.0, NEG_INF)[:, None, None, :]
            bias = kb if bias is None else bias + kb
        if bias is not None:
            scores = scores + Tensor(bias, dtype=scores.data.dtype)
        weights = T.softmax(scores, axis=-1)
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Lq, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(d, hidden, rng)
        self.down = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.down(T.gelu(self.up(x)))


class Block(Module):
    """Pre-norm transformer block, optionally with cross-attention to a memory."""

    def __init__(self, d: int, heads: int, ffn: int, rng: np.random.Generator, cross: bool = False):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        if cross:
            self.norm_x = LayerNorm(d)
            self.cross = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, ffn, rng)

    def __call__(self, x, causal: bool = False, memory=None):
        h = self.norm1(x)
        x = x + self.attn(h, h, causal=causal)
        if memory is not None:
            x = x + self.cross(self.norm_x(x), memory)
        return x + self.ff(self.norm2(x))
