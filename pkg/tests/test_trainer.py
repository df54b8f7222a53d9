import csv
import re

import numpy as np
import pytest

from conftest import OVERFIT_STEPS, overfit_fragments, random_sequences, tiny_config
from notediff.config import TrainConfig
from notediff.model import NoteModel
from notediff.tensor import Tensor
from notediff.tokenizer.vocab import ATTRIBUTES
from notediff.trainer import (Trainer, TrainingDiverged, build_model, clip_grad_norm,
                              global_grad_norm, load_model, load_trainer, lr_at, pad_batch,
                              save_checkpoint)


def _trainer(vocab, seed=0, **kw):
    model = NoteModel(tiny_config(vocab.sizes, seed=seed), np.random.default_rng(seed))
    cfg = TrainConfig(**{"max_steps": 20, "batch_size": 3, "seed": seed, **kw})
    return Trainer(model, random_sequences(vocab.sizes, 5, 7, seed=seed), cfg)


def _params(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def test_zero_learning_rate_leaves_parameters_unchanged(vocab):
    tr = _trainer(vocab, max_lr=0.0)
    before = _params(tr.model)
    batch = tr.sample_batch()
    tr.train_step(batch)
    tr.train_step(batch)
    after = _params(tr.model)
    assert all(np.array_equal(before[n], after[n]) for n in before)


def test_gradient_clip_to_unit_norm():
    a = Tensor(np.zeros(3), requires_grad=True)
    b = Tensor(np.zeros((2, 2)), requires_grad=True)
    a.grad = np.array([6.0, 0.0, 0.0])
    b.grad = np.array([[0.0, 8.0], [0.0, 0.0]])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(10.0)
    assert abs(global_grad_norm([a, b]) - 1.0) < 1e-6
    # below the threshold nothing changes
    assert clip_grad_norm([a, b], 5.0) == pytest.approx(1.0)
    assert abs(global_grad_norm([a, b]) - 1.0) < 1e-6


def test_learning_rate_schedule():
    cfg = TrainConfig(max_steps=100, max_lr=1e-3)
    assert lr_at(0, cfg) == pytest.approx(2e-4)
    assert lr_at(4, cfg) == pytest.approx(1e-3)
    assert lr_at(99, cfg) == pytest.approx(1e-4, rel=1e-2)
    lrs = [lr_at(s, cfg) for s in range(5, 100)]
    assert all(x >= y for x, y in zip(lrs, lrs[1:]))
    assert min(lrs) >= 1e-4 - 1e-12


def test_pad_batch():
    seqs = [np.ones((3, 2), int), np.ones((1, 2), int)]
    tokens, lengths = pad_batch(seqs, [7, 9])
    assert tokens.shape == (2, 3, 2) and list(lengths) == [3, 1]
    assert (tokens[1, 1:] == [7, 9]).all()


def test_padding_does_not_change_the_loss(vocab):
    """Summed CE of a padded batch equals the sum over its sequences run alone."""
    from notediff.tensor import no_grad, precision
    from notediff.trainer import loss_terms

    with precision(np.float64):
        model = NoteModel(tiny_config(vocab.sizes), np.random.default_rng(1))
    short, long_ = random_sequences(vocab.sizes, 2, 9, seed=4)
    short = short[:4]
    mask = np.random.default_rng(0).random((3 + 8, 8)) < 0.5
    p = np.full(mask.shape, 0.5)
    with precision(np.float64), no_grad():
        a = loss_terms(model, short[None], np.array([4]), mask[:3], p[:3])
        b = loss_terms(model, long_[None], np.array([9]), mask[3:], p[3:])
        tokens, lengths = pad_batch([short, long_], model.pad_ids)
        both = loss_terms(model, tokens, lengths, mask, p)
    assert both[4] == a[4] + b[4] == int(mask.sum())
    summed = 3 * float(a[1].data) + 8 * float(b[1].data)
    assert abs(11 * float(both[1].data) - summed) < 1e-9


def test_checkpoint_round_trip_is_byte_identical(vocab, tmp_path):
    tr = _trainer(vocab)
    tr.fit(3)
    save_checkpoint(tmp_path / "a", tr)
    again = load_trainer(tmp_path / "a", tr.sequences)
    save_checkpoint(tmp_path / "b", again)
    for name in ("params.bin", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    model = load_model(tmp_path / "a")
    assert all(np.array_equal(p.data, q.data) for (_, p), (_, q) in
               zip(model.named_parameters(), tr.model.named_parameters()))


def test_resume_gives_identical_next_step(vocab, tmp_path):
    straight = _trainer(vocab, seed=2)
    straight.fit(5)
    expected = straight.train_step().total

    interrupted = _trainer(vocab, seed=2)
    interrupted.fit(5)
    save_checkpoint(tmp_path / "ck", interrupted)
    resumed = load_trainer(tmp_path / "ck", interrupted.sequences)
    assert resumed.train_step().total == expected


def test_loading_into_a_different_width_names_the_tensor(vocab, tmp_path):
    tr = _trainer(vocab)
    save_checkpoint(tmp_path / "ck", tr)
    wider = NoteModel(tiny_config(vocab.sizes, d=32))
    with pytest.raises(ValueError, match="shape mismatch for tensor"):
        load_model(tmp_path / "ck", wider)


def test_truncated_checkpoint_is_rejected(vocab, tmp_path):
    tr = _trainer(vocab)
    save_checkpoint(tmp_path / "ck", tr)
    blob = (tmp_path / "ck" / "params.bin").read_bytes()
    (tmp_path / "ck" / "params.bin").write_bytes(blob[:100])
    with pytest.raises(ValueError, match="truncated"):
        load_model(tmp_path / "ck")


def test_seeded_runs_have_identical_loss_curves(vocab):
    a, b = _trainer(vocab, seed=3), _trainer(vocab, seed=3)
    a.fit(8)
    b.fit(8)
    assert [r["total"] for r in a.history] == [r["total"] for r in b.history]
    c = _trainer(vocab, seed=4)
    c.fit(8)
    assert [r["total"] for r in c.history] != [r["total"] for r in a.history]


def test_non_finite_loss_aborts_with_diagnostics(vocab):
    tr = _trainer(vocab)
    tr.model.heads[0].weight.data[:] = np.nan
    with pytest.raises(TrainingDiverged, match="step 0: lr="):
        tr.train_step()


def test_log_csv(vocab, tmp_path):
    tr = _trainer(vocab)
    tr.attribute_names = list(ATTRIBUTES)
    tr.fit(4)
    tr.write_log(tmp_path / "log.csv")
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert len(rows) == 4 and rows[0]["step"] == "0"
    assert {"lr", "total", "l_cl", "l_ce", "grad_norm", "ce_pitch"} <= set(rows[0])


def test_periodic_checkpoints(vocab, tmp_path):
    tr = _trainer(vocab, checkpoint_every=2)
    tr.fit(4, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["step0000002", "step0000004"]


# Parameters whose gradient is identically zero by construction:
#  * the key bias of every attention (softmax is shift invariant per query),
#  * query / key projections of attentions over a single key (the weight is always 1),
#    and the layer norms that only feed such a query.
SINGLE_KEY = re.compile(r"^((ciem\.(sa|ca)|denoiser\.\d+\.cross)\.(q|k)\.|ciem\.norm_ca\.|denoiser\.\d+\.norm_x\.)")
KEY_BIAS = re.compile(r"\.k\.bias$")


def test_dead_parameter_probe(golden_dir):
    vocab, frags = overfit_fragments(golden_dir)
    model = build_model(vocab.sizes)
    tr = Trainer(model, frags, TrainConfig(max_steps=10, batch_size=len(frags), seed=0))
    tr.train_step(track_grads=True)  # one full pass over the corpus

    observed = [set(np.concatenate(frags)[:, k].tolist()) for k in range(8)]
    n_pos = max(len(f) for f in frags)
    dead = []
    for name, seen in tr.grad_seen.items():
        if SINGLE_KEY.match(name) or KEY_BIAS.search(name):
            continue
        m = re.fullmatch(r"note_emb\.(\d+)\.weight", name)
        if m:
            rows = sorted(observed[int(m.group(1))])
            if not seen[rows].all(axis=1).all():
                dead.append(name)
            continue
        if name == "pos_emb.weight":
            if not seen[:n_pos].all():
                dead.append(name)
            continue
        if name.startswith("dec_emb."):
            k = int(name.split(".")[1])
            if not seen[model.mask_ids[k]].all():
                dead.append(name)
            continue
        if not seen.all():
            dead.append(name)
    assert dead == []


def test_exempt_parameters_really_get_zero_gradient(vocab):
    from notediff import tensor as T
    from notediff.trainer import compute_loss, draw_masks

    model = NoteModel(tiny_config(vocab.sizes), np.random.default_rng(0))
    seqs = random_sequences(vocab.sizes, 2, 5)
    tokens, lengths = pad_batch(seqs, model.pad_ids)
    mask, p = draw_masks(np.zeros((8, 8)), np.random.default_rng(0))
    total, _ = compute_loss(model, tokens, lengths, mask, p)
    T.backward(total)
    for name, param in model.named_parameters():
        if SINGLE_KEY.match(name):
            assert param.grad is None or not param.grad.any(), name
        if KEY_BIAS.search(name) and param.grad is not None:
            assert np.abs(param.grad).max() < 1e-5, name


def test_pad_rows_get_no_gradient(vocab):
    tr = _trainer(vocab)
    seqs = [tr.sequences[0], tr.sequences[1][:3]]
    tokens, lengths = pad_batch(seqs, tr.model.pad_ids)
    from notediff.trainer import draw_masks
    mask, p = draw_masks(np.zeros((int((lengths - 1).sum()), 8)), np.random.default_rng(0))
    tr.train_step((tokens, lengths, mask, p), track_grads=True)
    for k in range(8):
        seen = tr.grad_seen[f"note_emb.{k}.weight"]
        assert not seen[tr.model.pad_ids[k]].any()


def test_overfit_loss_decreases(overfit_run):
    total = np.array([r["total"] for r in overfit_run.history])
    assert len(total) == OVERFIT_STEPS
    assert total[-100:].mean() < total[:100].mean()
