import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from notediff.diffusion import (Status, decode_note, forward_mask, generate_sequence,
                                num_tokens_to_decode, resolve_clamps, schedule)
from notediff.tensor import Tensor


def test_schedule_examples():
    assert schedule(8, 4) == [2, 2, 2, 2]
    assert schedule(7, 4) == [2, 2, 2, 1]
    assert schedule(0, 3) == [0, 0, 0]
    assert schedule(3, 8) == [1, 1, 1, 0, 0, 0, 0, 0]


def test_schedule_conserves_every_count():
    for num_m in range(65):
        for steps in range(1, 17):
            counts = schedule(num_m, steps)
            assert min(counts) >= 0 and sum(counts) == num_m


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 500), st.integers(1, 64))
def test_schedule_is_balanced(num_m, steps):
    counts = schedule(num_m, steps)
    assert sum(counts) == num_m and max(counts) - min(counts) <= 1
    assert counts == sorted(counts, reverse=True)


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        num_tokens_to_decode(4, 0, 0)
    with pytest.raises(ValueError):
        num_tokens_to_decode(4, 2, 2)


def test_forward_mask_extremes():
    rng = np.random.default_rng(0)
    note = np.arange(8)
    assert forward_mask(note, 0.0, rng).n_masked == 0
    full = forward_mask(note, 1.0, rng)
    assert full.n_masked == 8 and (full.values == -1).all()
    with pytest.raises(ValueError):
        forward_mask(note, 1.5, rng)


def test_forward_mask_rate_monte_carlo():
    rng = np.random.default_rng(1)
    note = np.arange(8)
    n = 20000
    hits = np.zeros(8)
    for _ in range(n):
        hits += forward_mask(note, 0.3, rng).masked
    assert np.all(np.abs(hits / n - 0.3) < 0.015)


def test_kept_attributes_keep_their_values():
    state = forward_mask(np.arange(10, 18), 0.5, np.random.default_rng(2))
    kept = ~state.masked
    assert np.array_equal(state.values[kept], np.arange(10, 18)[kept])
    assert (state.status[kept] == Status.COMMITTED).all()


def _condition(d=16, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=d))


@pytest.mark.parametrize("steps", [1, 2, 3, 8, 12])
def test_denoiser_calls_equal_steps(tiny_model, steps):
    tiny_model.denoiser_calls = 0
    note = decode_note(tiny_model, _condition(), steps)
    assert tiny_model.denoiser_calls == steps
    assert all(0 <= v < s - 2 for v, s in zip(note, tiny_model.config.vocab_sizes))


def test_single_step_commits_everything_at_once(tiny_model):
    trace = []
    decode_note(tiny_model, _condition(), 1, trace=trace)
    assert [s.n_masked for s in trace] == [8, 0]


def test_trace_is_monotone_and_follows_schedule(tiny_model):
    trace = []
    decode_note(tiny_model, _condition(), 3, clamps={"instrument": 0, "tempo": 5}, trace=trace)
    assert [s.n_masked for s in trace] == [6, 4, 2, 0]
    for before, after in zip(trace, trace[1:]):
        kept = before.status != Status.MASKED
        assert np.array_equal(before.values[kept], after.values[kept])
        assert (after.status[kept] == before.status[kept]).all()


def test_clamps_are_honoured(tiny_model, vocab):
    clamps = {"instrument": vocab.parse_value("instrument", "Piano"), "pitch": 61, "velocity": 3}
    for seed in range(5):
        note = decode_note(tiny_model, _condition(seed=seed), 4, clamps=clamps,
                           rng=np.random.default_rng(seed), mode="sample")
        assert note.instrument == 0 and note.pitch == 61 and note.velocity == 3


def test_confidence_ties_go_to_lowest_attribute():
    class Flat:
        """Denoiser stub whose logits are identical for every attribute."""

        class config:
            vocab_sizes = [6] * 8
        mask_ids = np.full(8, 4)
        denoiser_calls = 0

        def denoise(self, masked, condition, t):
            self.denoiser_calls += 1
            return [Tensor(np.array([[0.0, 1.0, 0.0, 0.0, 9.0, 9.0]])) for _ in range(8)]

    trace = []
    note = decode_note(Flat(), Tensor(np.zeros(4)), 4, trace=trace)
    assert tuple(note) == (1,) * 8
    assert list(np.flatnonzero(trace[1].status != Status.MASKED)) == [0, 1]


def test_all_clamped_still_calls_denoiser_t_times(tiny_model):
    clamps = {k: 0 for k in range(8)}
    tiny_model.denoiser_calls = 0
    note = decode_note(tiny_model, _condition(), 5, clamps=clamps)
    assert tuple(note) == (0,) * 8 and tiny_model.denoiser_calls == 5


def test_random_unmask_strategy(tiny_model):
    trace = []
    decode_note(tiny_model, _condition(), 4, rng=np.random.default_rng(0), strategy="random", trace=trace)
    assert [s.n_masked for s in trace] == [8, 6, 4, 2, 0]


def test_bad_clamps_are_rejected(tiny_model):
    with pytest.raises(KeyError):
        resolve_clamps({"loudness": 3}, tiny_model.config.vocab_sizes)
    with pytest.raises(ValueError):
        resolve_clamps({"pitch": 128}, tiny_model.config.vocab_sizes)
    with pytest.raises(ValueError):
        decode_note(tiny_model, _condition(), 0)


def test_generate_zero_notes(tiny_model):
    assert generate_sequence(tiny_model, 0) == []


def test_generation_is_deterministic(tiny_model):
    a = generate_sequence(tiny_model, 6, 4, rng=np.random.default_rng(5), mode="sample")
    b = generate_sequence(tiny_model, 6, 4, rng=np.random.default_rng(5), mode="sample")
    c = generate_sequence(tiny_model, 6, 4)
    d = generate_sequence(tiny_model, 6, 4)
    assert a == b and c == d


def test_note_clamps_fix_the_opening(tiny_model):
    opening = {k: v for k, v in enumerate([0, 4, 3, 9, 40, 72, 12, 20])}
    notes = generate_sequence(tiny_model, 3, 4, note_clamps={0: opening})
    assert tuple(notes[0]) == (0, 4, 3, 9, 40, 72, 12, 20)


def test_committed_attributes_never_remask_over_1000_notes(tiny_model):
    traces = []
    rng = np.random.default_rng(0)
    for _ in range(20):
        generate_sequence(tiny_model, 50, 4, clamps={"tempo": 7}, rng=rng, mode="sample", traces=traces)
    assert len(traces) == 1000
    for trace in traces:
        for before, after in zip(trace, trace[1:]):
            done = before.status != Status.MASKED
            assert (after.status[done] != Status.MASKED).all()
            assert np.array_equal(after.values[done], before.values[done])
        assert trace[-1].n_masked == 0 and trace[-1].values[3] == 7
