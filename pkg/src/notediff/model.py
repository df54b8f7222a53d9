"""Two-level note model: causal note generator, CIEM, attribute denoiser."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .nn import Block, Embedding, FeedForward, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor


def time_embedding(t, d: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal features of diffusion time ``t`` in [0, 1], shape (N, d)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if d % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)


class CIEM(Module):
    """Self-attention over the next-note latent, then cross-attention to ``z_1``.

    Each attention is wrapped in a pre-norm residual, as in a transformer
    decoder layer; a bare single-key cross-attention would discard its query.
    """

    def __init__(self, d: int, heads: int, ffn: int, rng):
        self.norm_sa = LayerNorm(d)
        self.sa = MultiHeadAttention(d, heads, rng)
        self.norm_ca = LayerNorm(d)
        self.ca = MultiHeadAttention(d, heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, ffn, rng)

    def __call__(self, z_next, z_first):
        single = z_next.ndim == 1
        if single:
            z_next, z_first = z_next.reshape(1, -1), z_first.reshape(1, -1)
        if z_next.shape != z_first.shape:
            raise ValueError(f"ciem: shape mismatch {z_next.shape} vs {z_first.shape}")
        n, d = z_next.shape
        x = z_next.reshape(n, 1, d)
        mem = z_first.reshape(n, 1, d)
        h = self.norm_sa(x)
        x = x + self.sa(h, h)
        x = x + self.ca(self.norm_ca(x), mem)
        x = x + self.ff(self.norm_ff(x))
        out = x.reshape(n, d)
        return out.reshape(d) if single else out


class NoteModel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        if config.n_attributes == 0:
            raise ValueError("ModelConfig.vocab_sizes is empty")
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        d, ffn = config.d, config.d * config.ffn_mult
        self.note_emb = [Embedding(v, d, rng) for v in config.vocab_sizes]
        self.pos_emb = Embedding(config.max_notes, d, rng)
        self.cond_emb = Embedding(config.cond_vocab, d, rng) if config.cond_vocab else None
        self.generator = [Block(d, config.heads, ffn, rng) for _ in range(config.gen_layers)]
        self.gen_norm = LayerNorm(d)
        self.ciem = CIEM(d, config.heads, ffn, rng)
        self.dec_emb = [Embedding(v, d, rng) for v in config.vocab_sizes]
        self.dec_pos = Embedding(config.n_attributes, d, rng)
        self.time_proj = Linear(d, d, rng)
        self.denoiser = [Block(d, config.heads, ffn, rng, cross=True)
                         for _ in range(config.dec_layers)]
        self.dec_norm = LayerNorm(d)
        self.heads = [Linear(d, v, rng) for v in config.vocab_sizes]
        self.denoiser_calls = 0

    @property
    def mask_ids(self) -> np.ndarray:
        return np.array(self.config.vocab_sizes) - 2

    @property
    def pad_ids(self) -> np.ndarray:
        return np.array(self.config.vocab_sizes) - 1

    # --- note embedding ---------------------------------------------------

    def embed_notes(self, tokens, order=None) -> Tensor:
        """(B, M, K) indices -> (B, M, d): sum of attribute embeddings plus position."""
        tokens = np.asarray(tokens, dtype=np.int64)
        M = tokens.shape[-2]
        if M > self.config.max_notes:
            raise ValueError(f"sequence of {M} notes exceeds max_notes={self.config.max_notes}")
        order = range(tokens.shape[-1]) if order is None else order
        total = None
        for k in order:
            e = self.note_emb[k](tokens[..., k])
            total = e if total is None else total + e
        return total + self.pos_emb(np.arange(M))

    def embed_note(self, note, position: int) -> Tensor:
        if not 0 <= position < self.config.max_notes:
            raise ValueError(f"position {position} outside [0, {self.config.max_notes})")
        note = np.asarray(note, dtype=np.int64)
        total = None
        for k, idx in enumerate(note):
            e = self.note_emb[k](idx)
            total = e if total is None else total + e
        return total + self.pos_emb(position)

    # --- generator ----------------------------------------------------------

    def generate_latents(self, tokens, condition=None, order=None):
        """Run the causal generator.

        ``tokens`` is (B, M, K) with row 0 the initial note. Returns
        ``(latents, hidden)``, both (B, M, d): ``latents[:, j]`` is the latent of
        note ``j + 1`` and ``hidden`` holds the states after the contrastive layer.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 2:
            tokens = tokens[None]
        x = self.embed_notes(tokens, order)
        n_cond = 0
        if condition is not None and np.size(condition):
            if self.cond_emb is None:
                raise ValueError("model was built without a condition vocabulary")
            condition = np.asarray(condition, dtype=np.int64).reshape(tokens.shape[0], -1)
            n_cond = condition.shape[1]
            x = T.concat([self.cond_emb(condition), x], axis=1)
        if x.shape[1] > self.config.max_notes:
            raise ValueError(f"condition + notes = {x.shape[1]} exceeds max_notes={self.config.max_notes}")
        hidden = None
        for i, block in enumerate(self.generator):
            x = block(x, causal=True)
            if i == self.config.mlsdes_layer:
                hidden = x
        latents = self.gen_norm(x)
        if n_cond:
            latents, hidden = latents[:, n_cond:], hidden[:, n_cond:]
        return latents, hidden

    # --- denoiser -------------------------------------------------------------

    def denoise(self, masked, condition, t) -> list[Tensor]:
        """Logits per attribute for (N, K) partially masked notes.

        ``condition`` is the (N, d) enhanced latent, ``t`` the (N,) diffusion time.
        """
        self.denoiser_calls += 1
        masked = np.asarray(masked, dtype=np.int64)
        single = masked.ndim == 1
        if single:
            masked = masked[None]
            condition = condition.reshape(1, -1)
        n, k = masked.shape
        if k != self.config.n_attributes:
            raise ValueError(f"expected {self.config.n_attributes} attributes, got {k}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        if (t < 0).any() or (t > 1).any():
            raise ValueError("diffusion time must lie in [0, 1]")
        d = self.config.d
        x = T.stack([self.dec_emb[i](masked[:, i]) for i in range(k)], axis=1)
        x = x + self.dec_pos.weight
        temb = self.time_proj(Tensor(time_embedding(t, d, x.data.dtype)))
        x = x + temb.reshape(n, 1, d)
        memory = condition.reshape(n, 1, d)
        for block in self.denoiser:
            x = block(x, causal=False, memory=memory)
        x = self.dec_norm(x)
        logits = [self.heads[i](x[:, i, :]) for i in range(k)]
        return [lg[0] for lg in logits] if single else logits
