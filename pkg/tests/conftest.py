import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from make_fixtures import DRUM_ONLY, GOLDEN, N_FILES, build_corpus  # noqa: E402

from notediff.config import ModelConfig  # noqa: E402
from notediff.model import NoteModel  # noqa: E402
from notediff.tokenizer import make_vocab  # noqa: E402


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    files = sorted(GOLDEN.glob("*.mid")) if GOLDEN.exists() else []
    if len(files) != N_FILES:
        build_corpus(GOLDEN)
    return GOLDEN


@pytest.fixture(scope="session")
def drum_only_names():
    return {f"{n}.mid" for n in DRUM_ONLY}


@pytest.fixture(scope="session")
def vocab():
    return make_vocab()


def tiny_config(vocab_sizes, **kw) -> ModelConfig:
    base = dict(vocab_sizes=list(vocab_sizes), d=16, gen_layers=2, dec_layers=1, heads=2,
                max_notes=64, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model(vocab):
    return NoteModel(tiny_config(vocab.sizes), np.random.default_rng(0))


def random_sequences(vocab_sizes, n_seqs, length, seed=0):
    """Random token sequences with the all-zero initial row first."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_seqs):
        s = np.stack([rng.integers(0, v - 2, length) for v in vocab_sizes], axis=1)
        s[0] = 0
        out.append(s)
    return out


FRAGMENT_NOTES = 16
OVERFIT_STEPS = 2000


def overfit_fragments(golden: Path, n: int = 8, notes: int = FRAGMENT_NOTES):
    """First ``notes`` notes of the first ``n`` pitched golden pieces with distinct openings."""
    import warnings

    from notediff.tokenizer import MidiWarning, build_vocab, encode, read_midi

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MidiWarning)
        scores = [read_midi(p) for p in sorted(golden.glob("piece_*.mid"))]
    vocab = build_vocab(scores)
    frags, openings = [], set()
    for s in scores:
        toks = encode(s, vocab).tokens
        if len(toks) < notes + 1 or tuple(toks[1]) in openings:
            continue
        openings.add(tuple(toks[1]))
        frags.append(toks[: notes + 1])
        if len(frags) == n:
            break
    assert len(frags) == n
    return vocab, frags


class OverfitRun:
    """Result of training the default desk model on the 8-fragment corpus."""

    def __init__(self, golden: Path):
        import time

        from notediff.config import TrainConfig
        from notediff.trainer import Trainer, build_model

        self.vocab, self.fragments = overfit_fragments(golden)
        self.model = build_model(self.vocab.sizes)
        cfg = TrainConfig(max_steps=OVERFIT_STEPS, batch_size=8, seed=0)
        self.trainer = Trainer(self.model, self.fragments, cfg)
        start = time.perf_counter()
        self.trainer.fit()
        self.seconds = time.perf_counter() - start
        self.history = self.trainer.history

    def eval_masked_ce(self, draws: int = 20, seed: int = 123) -> float:
        """Mean masked CE over fresh per-note mask draws on the full training fragments."""
        from notediff.tensor import no_grad
        from notediff.trainer import compute_loss, draw_masks, pad_batch

        rng = np.random.default_rng(seed)
        tokens, lengths = pad_batch(self.fragments, self.model.pad_ids)
        n_targets = int((lengths - 1).sum())
        nll, count = 0.0, 0
        with no_grad():
            for _ in range(draws):
                mask, p_mask = draw_masks(np.zeros((n_targets, 8)), rng)
                _, br = compute_loss(self.model, tokens, lengths, mask, p_mask)
                nll += br.masked_ce * br.n_masked
                count += br.n_masked
        return nll / count


@pytest.fixture(scope="session")
def overfit_run(golden_dir) -> OverfitRun:
    return OverfitRun(golden_dir)
