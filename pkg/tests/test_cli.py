import csv
import json
import shutil
import subprocess
import sys
import warnings

import mido
import pytest

from notediff import __version__
from notediff.cli import main
from notediff.tokenizer import MidiWarning, read_midi

TINY = {"model": {"d": 16, "gen_layers": 2, "dec_layers": 1, "heads": 2, "max_notes": 64},
        "train": {"max_steps": 6, "batch_size": 4, "max_len": 32}}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, golden_dir):
    """A small tokenized corpus and a tiny trained checkpoint shared by the module."""
    root = tmp_path_factory.mktemp("cli")
    midi = root / "midi"
    midi.mkdir()
    for f in sorted(golden_dir.glob("piece_*.mid"))[:6]:
        shutil.copy(f, midi / f.name)
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["tokenize", str(midi), "--out", str(root / "tok")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "tok"),
                 "--out", str(root / "ckpt"), "--seed", "1"]) == 0
    return root


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == f"notediff {__version__}"


def test_missing_subcommand_is_usage_error(capsys):
    code, _, err = run([], capsys)
    assert code == 1 and err.startswith("error: usage:")


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(["generate", "--bogus"], capsys)
    assert code == 1 and err.count("\n") == 1 and err.startswith("error: usage:")


def test_missing_input_is_data_error(tmp_path, capsys):
    code, _, err = run(["eval", tmp_path / "nope.mid", "--out", tmp_path], capsys)
    assert code == 2 and err.startswith("error: data:")


def test_bad_clamp_is_usage_error(workspace, tmp_path, capsys):
    code, _, err = run(["generate", "--ckpt", workspace / "ckpt", "--clamp", "loudness=3",
                        "--out", tmp_path / "x.mid"], capsys)
    assert code == 1 and "loudness" in err


def test_dump_config_train(capsys):
    code, out, _ = run(["train", "--dump-config", "--d", "32", "--steps", "7"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["model"]["d"] == 32 and doc["train"]["max_steps"] == 7


def test_dump_config_respects_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"d": 24, "heads": 4}, "train": {"max_steps": 3}}))
    code, out, _ = run(["train", "--dump-config", "--config", cfg, "--d", "32"], capsys)
    doc = json.loads(out)
    assert doc["model"]["d"] == 32 and doc["model"]["heads"] == 4 and doc["train"]["max_steps"] == 3
    assert doc["train"]["max_lr"] == 3e-4


def test_unknown_config_key_is_data_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"width": 3}}))
    code, _, err = run(["train", "--dump-config", "--config", cfg], capsys)
    assert code == 2 and "width" in err


def test_tokenize_outputs(workspace):
    tok = workspace / "tok"
    assert (tok / "vocab.json").is_file() and (tok / "clip_report.csv").is_file()
    assert len(list(tok.glob("*.tok"))) == 6 and len(list(tok.glob("*.meta.json"))) == 6


def test_train_outputs(workspace):
    ck = workspace / "ckpt"
    for name in ("params.bin", "manifest.json", "vocab.json", "train_log.csv", "loss.png"):
        assert (ck / name).is_file(), name
    rows = list(csv.DictReader(open(ck / "train_log.csv")))
    assert len(rows) == 6


def test_train_echoes_resolved_config(workspace, tmp_path, capsys):
    code, _, err = run(["train", "--config", workspace / "tiny.json", "--data", workspace / "tok",
                        "--out", tmp_path / "ck", "--steps", "1"], capsys)
    assert code == 0
    assert "precedence: flags > config file > defaults" in err
    assert '"max_steps": 1' in err and "seed: 0" in err


def test_resume_continues_step_count(workspace, tmp_path, capsys):
    code, _, _ = run(["train", "--data", workspace / "tok", "--out", tmp_path / "ck",
                      "--resume", workspace / "ckpt", "--config", workspace / "tiny.json",
                      "--steps", "8"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert doc["step"] == 8


def test_generate_zero_notes_is_valid_midi(workspace, tmp_path, capsys):
    code, _, _ = run(["generate", "--ckpt", workspace / "ckpt", "--notes", "0",
                      "--out", tmp_path / "empty.mid"], capsys)
    assert code == 0
    mido.MidiFile(tmp_path / "empty.mid")
    assert read_midi(tmp_path / "empty.mid").n_notes == 0


def test_generate_with_instrument_clamp(workspace, tmp_path, capsys):
    code, _, _ = run(["generate", "--ckpt", workspace / "ckpt", "--notes", "12", "--steps", "2",
                      "--clamp", "instrument=Piano", "--out", tmp_path / "p.mid"], capsys)
    assert code == 0
    programs = {m.program for t in mido.MidiFile(tmp_path / "p.mid").tracks
                for m in t if m.type == "program_change"}
    assert programs <= {0}
    score = read_midi(tmp_path / "p.mid")
    assert score.n_notes > 0 and score.instruments() == {0}


def test_generate_is_byte_identical_across_runs(workspace, tmp_path, capsys):
    args = ["generate", "--ckpt", workspace / "ckpt", "--notes", "10", "--steps", "3",
            "--mode", "sample", "--seed", "4", "--pieces", "2", "--tokens-out"]
    assert run(args + ["--out", tmp_path / "a.mid"], capsys)[0] == 0
    assert run(args + ["--out", tmp_path / "b.mid"], capsys)[0] == 0
    for i in range(2):
        a, b = tmp_path / f"a_{i:03d}.mid", tmp_path / f"b_{i:03d}.mid"
        assert a.read_bytes() == b.read_bytes()
        assert a.with_suffix(".tok").read_bytes() == b.with_suffix(".tok").read_bytes()


def test_generate_with_opening(workspace, tmp_path, capsys):
    opening = sorted((workspace / "tok").glob("*.tok"))[0]
    code, _, _ = run(["generate", "--ckpt", workspace / "ckpt", "--notes", "4", "--steps", "2",
                      "--open-with", opening, "--tokens-out", "--out", tmp_path / "o.mid"], capsys)
    assert code == 0
    first = opening.read_text().splitlines()[1]
    assert (tmp_path / "o.tok").read_text().splitlines()[1] == first


def test_eval_and_references(workspace, tmp_path, capsys):
    midi = sorted((workspace / "midi").glob("*.mid"))
    refs = tmp_path / "refs.csv"
    refs.write_text("name,tempo,key,time_signature,instruments\n"
                    f"{midi[0].name},120,C:maj,4/4,piano\n{midi[1].stem},,,,\n")
    code, out, _ = run(["eval", *midi[:3], "--references", refs, "--out", tmp_path / "ev"], capsys)
    assert code == 0 and out.startswith("pieces 3 sc ")
    for name in ("metrics.csv", "metric_counts.csv", "metrics.png"):
        assert (tmp_path / "ev" / name).is_file()
    counts = {r["metric"]: r for r in csv.DictReader(open(tmp_path / "ev" / "metric_counts.csv"))}
    assert counts["tbt"]["evaluated"] == "1" and counts["tbt"]["skipped_or_excluded"] == "2"


def test_analyze_mi(workspace, tmp_path, capsys):
    code, _, _ = run(["analyze-mi", workspace / "tok", "--out", tmp_path / "mi"], capsys)
    assert code == 0
    for name in ("mi_nats.csv", "nmi.csv", "cond_entropy_nats.csv", "entropy_nats.csv",
                 "mi_nats.png", "nmi.png"):
        assert (tmp_path / "mi" / name).is_file()
    header = next(csv.reader(open(tmp_path / "mi" / "mi_nats.csv")))
    assert header == ["", "Beat", "Pitch", "Velocity", "Duration", "Instrument", "Chord", "Tempo", "Type"]


def test_filter_reports_drum_only(golden_dir, drum_only_names, tmp_path, capsys):
    code, out, _ = run(["filter", golden_dir, "--out", tmp_path / "f.csv", "--copy-to", tmp_path / "kept"],
                       capsys)
    assert code == 0
    kept = {p.name for p in (tmp_path / "kept").iterdir()}
    assert not kept & drum_only_names and len(kept) == 50 - len(drum_only_names)


def _long_note_file(path):
    mid = mido.MidiFile(ticks_per_beat=480)
    track = mido.MidiTrack()
    track += [mido.Message("note_on", note=60, velocity=80, time=0),
              mido.Message("note_off", note=60, velocity=0, time=480 * 20)]
    mid.tracks.append(track)
    mid.save(path)


def test_roundtrip_check_exit_status(golden_dir, tmp_path, capsys):
    good = sorted(golden_dir.glob("piece_*.mid"))[:3]
    vocab = tmp_path / "vocab.json"
    assert main(["build-vocab", *map(str, good), "--out", str(vocab)]) == 0
    code, _, _ = run(["roundtrip-check", *good, "--vocab", vocab, "--report", tmp_path / "r.csv"], capsys)
    assert code == 0
    bad = tmp_path / "long.mid"
    _long_note_file(bad)
    code, out, err = run(["roundtrip-check", *good, bad, "--vocab", vocab, "--report", tmp_path / "r2.csv"],
                         capsys)
    assert code == 2 and "1 with violations" in out and err.startswith("error: data:")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "notediff", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout


def test_generated_midi_reads_without_warnings(workspace, tmp_path, capsys):
    run(["generate", "--ckpt", workspace / "ckpt", "--notes", "8", "--steps", "2",
         "--out", tmp_path / "w.mid"], capsys)
    with warnings.catch_warnings():
        warnings.simplefilter("error", MidiWarning)
        read_midi(tmp_path / "w.mid")
