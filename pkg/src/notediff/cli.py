"""Command-line entry point: ``notediff <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error. Every
failure prints a single ``error: <kind>: <reason>`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, model_config_from_dict, train_config_from_dict
from .tokenizer import (ATTRIBUTES, AttributeVocab, MidiParseError, MidiWarning, ScoreMeta, build_vocab,
                        decode, encode, filter_corpus, read_midi, roundtrip_violations, tokens_from_text,
                        tokens_to_text, write_midi)
from .tokenizer.encoding import clip_report_csv

log = logging.getLogger("notediff")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
MIDI_SUFFIXES = (".mid", ".midi", ".smf")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --- helpers ------------------------------------------------------------------

def _expand(paths, suffixes) -> list[Path]:
    """Files given directly plus matching files under given directories, sorted."""
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(f for f in p.rglob("*") if f.suffix.lower() in suffixes and f.is_file()))
        elif p.is_file():
            out.append(p)
        else:
            raise DataError(f"no such file or directory: {p}")
    if not out:
        raise DataError(f"no input files matching {'/'.join(suffixes)}")
    return out


def _read_scores(paths, skip_bad: bool = True):
    names, scores, bad = [], [], []
    for f in _expand(paths, MIDI_SUFFIXES):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MidiWarning)
                scores.append(read_midi(f))
            names.append(f.name)
        except MidiParseError as exc:
            if not skip_bad:
                raise DataError(f"{f}: {exc}") from None
            bad.append((f.name, str(exc)))
            log.warning("skipping %s: %s", f, exc)
    if not scores:
        raise DataError("no readable MIDI files" + (f"; first failure {bad[0][0]}: {bad[0][1]}" if bad else ""))
    return names, scores, bad


def _load_vocab(path) -> AttributeVocab:
    try:
        return AttributeVocab.load(path)
    except FileNotFoundError:
        raise DataError(f"vocabulary not found: {path}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"bad vocabulary {path}: {exc}") from None


def _load_token_dir(data) -> tuple[list[str], list[np.ndarray], AttributeVocab]:
    data = Path(data)
    if not data.is_dir():
        raise DataError(f"token directory not found: {data}")
    vocab = _load_vocab(data / "vocab.json")
    files = sorted(data.glob("*.tok"))
    if not files:
        raise DataError(f"no .tok files in {data}")
    names, seqs = [], []
    for f in files:
        try:
            toks = tokens_from_text(f.read_text())
        except ValueError as exc:
            raise DataError(f"{f}: {exc}") from None
        if len(toks) < 2 or (toks >= np.array(vocab.sizes)).any():
            raise DataError(f"{f}: needs the initial note plus at least one note within the vocabulary")
        names.append(f.stem)
        seqs.append(toks)
    return names, seqs, vocab


def _echo(resolved: dict, seed) -> None:
    print("precedence: flags > config file > defaults", file=sys.stderr)
    print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)
    print(f"seed: {seed}", file=sys.stderr)


def _write(path: Path, text: str | bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(text, bytes):
        path.write_bytes(text)
    else:
        path.write_text(text)
    return path


# --- subcommands --------------------------------------------------------------

def cmd_tokenize(args) -> int:
    names, scores, bad = _read_scores(args.inputs)
    vocab = _load_vocab(args.vocab) if args.vocab else build_vocab(scores)
    out = Path(args.out)
    _write(out / "vocab.json", vocab.to_json())
    clipped = []
    for name, score in zip(names, scores):
        enc = encode(score, vocab)
        stem = Path(name).stem
        _write(out / f"{stem}.tok", tokens_to_text(enc.tokens))
        _write(out / f"{stem}.meta.json", json.dumps(enc.meta.to_dict(), sort_keys=True) + "\n")
        clipped.append((name, enc.clipped))
    _write(out / "clip_report.csv", clip_report_csv(clipped))
    if bad:
        _write(out / "skipped.csv", "name,reason\n" + "".join(f"{n},\"{r}\"\n" for n, r in bad))
    print(f"tokenized {len(scores)} file(s) into {out} ({len(bad)} skipped)")
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    _, scores, _ = _read_scores(args.inputs)
    vocab = build_vocab(scores)
    _write(Path(args.out), vocab.to_json())
    print(f"vocabulary sizes {vocab.sizes} -> {args.out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    names, scores, _ = _read_scores(args.inputs)
    kept, report = filter_corpus(scores, names)
    _write(Path(args.out), report.to_csv())
    if args.copy_to:
        keep = {r[0] for r in report.rows if r[2] == "kept"}
        for f in _expand(args.inputs, MIDI_SUFFIXES):
            if f.name in keep:
                _write(Path(args.copy_to) / f.name, f.read_bytes())
    print(f"kept {report.kept} removed {report.removed}")
    return EXIT_OK


def _train_configs(args, vocab_sizes):
    model_d, train_d = load_config(args.config) if args.config else ({}, {})
    flag_model = {"d": args.d, "seed": args.seed}
    flag_train = {"max_steps": args.steps, "max_lr": args.lr, "batch_size": args.batch_size,
                  "seed": args.seed, "max_len": args.max_len, "checkpoint_every": args.checkpoint_every}
    model_d.update({k: v for k, v in flag_model.items() if v is not None})
    train_d.update({k: v for k, v in flag_train.items() if v is not None})
    model_d["vocab_sizes"] = list(vocab_sizes)
    return model_config_from_dict(model_d), train_config_from_dict(train_d)


def cmd_train(args) -> int:
    from .plotting import loss_curve
    from .trainer import Trainer, TrainingDiverged, load_trainer, save_checkpoint
    from .model import NoteModel

    if args.dump_config and not args.data:
        mcfg, tcfg = _train_configs(args, [])
        print(json.dumps({"model": asdict(mcfg), "train": asdict(tcfg)}, indent=1, sort_keys=True))
        return EXIT_OK
    if not args.data or not args.out:
        raise UsageError("train needs --data and --out")
    names, seqs, vocab = _load_token_dir(args.data)
    mcfg, tcfg = _train_configs(args, vocab.sizes)
    resolved = {"model": asdict(mcfg), "train": asdict(tcfg)}
    if args.dump_config:
        print(json.dumps(resolved, indent=1, sort_keys=True))
        return EXIT_OK
    _echo(resolved, tcfg.seed)
    out = Path(args.out)
    if args.resume:
        trainer = load_trainer(args.resume, seqs, attribute_names=ATTRIBUTES)
        # the resolved config (flags > file > defaults) governs the continued run
        trainer.cfg = trainer.optimizer.cfg = tcfg
    else:
        trainer = Trainer(NoteModel(mcfg), seqs, tcfg, attribute_names=ATTRIBUTES)

    def report(step, br):
        if step % max(1, args.log_every) == 0 or step == tcfg.max_steps:
            print(f"step {step} total {br.total:.4f} ce {br.l_ce:.4f} masked_ce {br.masked_ce:.4f} "
                  f"cl {br.l_cl:.4f}", file=sys.stderr)

    try:
        trainer.fit(out_dir=out, on_step=report)
    except TrainingDiverged as exc:
        save_checkpoint(out / "diverged", trainer)
        trainer.write_log(out / "train_log.csv")
        raise RuntimeError(str(exc)) from None
    save_checkpoint(out, trainer)
    _write(out / "vocab.json", vocab.to_json())
    trainer.write_log(out / "train_log.csv")
    if trainer.history:
        loss_curve(trainer.history, out / "loss.png")
    last = trainer.history[-1] if trainer.history else {}
    print(f"trained {trainer.step} steps on {len(seqs)} sequences; final masked_ce "
          f"{last.get('masked_ce', float('nan')):.4f}; checkpoint {out}")
    return EXIT_OK


def parse_clamps(items, vocab: AttributeVocab) -> dict[int, int]:
    clamps = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"clamp {item!r} is not attr=value")
        attr, value = (s.strip() for s in item.split("=", 1))
        attr = attr.lower()
        if attr not in ATTRIBUTES:
            raise UsageError(f"unknown clamp attribute {attr!r}; expected one of {','.join(ATTRIBUTES)}")
        try:
            clamps[ATTRIBUTES.index(attr)] = vocab.parse_value(attr, value)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad clamp value {item!r}: {exc}") from None
    return clamps


def generate_pieces(model, vocab, n_pieces, n_notes, steps, clamps, mode, seed, opening=None,
                    strategy="confidence"):
    """Generate ``n_pieces`` token arrays (initial note first) with one seeded stream."""
    from .diffusion import generate_sequence

    rng = np.random.default_rng(seed)
    note_clamps = {0: {k: int(v) for k, v in enumerate(opening)}} if opening is not None else None
    pieces = []
    for _ in range(n_pieces):
        notes = generate_sequence(model, n_notes, steps, clamps, note_clamps, rng=rng, mode=mode,
                                  strategy=strategy)
        rows = [vocab.initial_note()] + [np.array(n, dtype=np.int64) for n in notes]
        pieces.append(np.array(rows, dtype=np.int64).reshape(-1, len(ATTRIBUTES)))
    return pieces


def cmd_generate(args) -> int:
    from .trainer import load_model

    resolved = {"notes": args.notes, "steps": args.steps, "mode": args.mode, "seed": args.seed,
                "clamp": list(args.clamp or []), "pieces": args.pieces, "strategy": args.strategy,
                "ckpt": args.ckpt, "open_with": args.open_with}
    if args.notes < 0 or args.steps < 1 or args.pieces < 1:
        raise UsageError("--notes must be >= 0, --steps and --pieces >= 1")
    if args.dump_config:
        print(json.dumps(resolved, indent=1, sort_keys=True))
        return EXIT_OK
    if not args.ckpt or not args.out:
        raise UsageError("generate needs --ckpt and --out")
    ckpt = Path(args.ckpt)
    if not (ckpt / "manifest.json").is_file():
        raise DataError(f"no checkpoint manifest in {ckpt}")
    vocab = _load_vocab(ckpt / "vocab.json")
    clamps = parse_clamps(args.clamp, vocab)
    opening = None
    if args.open_with:
        rows = tokens_from_text(Path(args.open_with).read_text())
        if len(rows) < 2:
            raise DataError(f"{args.open_with} has no note after the initial row")
        opening = rows[1]
    _echo(resolved, args.seed)
    model = load_model(ckpt)
    if model.config.vocab_sizes != vocab.sizes:
        raise DataError("checkpoint and vocabulary sizes disagree")
    pieces = generate_pieces(model, vocab, args.pieces, args.notes, args.steps, clamps, args.mode,
                             args.seed, opening, args.strategy)
    out = Path(args.out)
    written = []
    for i, toks in enumerate(pieces):
        path = out if args.pieces == 1 else out.with_name(f"{out.stem}_{i:03d}{out.suffix or '.mid'}")
        _write(path, write_midi(decode(toks, vocab, ScoreMeta())))
        if args.tokens_out:
            _write(path.with_suffix(".tok"), tokens_to_text(toks))
        written.append(path)
    print(f"wrote {len(written)} piece(s), {args.notes} notes each, T={args.steps}: "
          f"{written[0] if len(written) == 1 else out.parent}")
    return EXIT_OK


def _read_references(path) -> dict[str, dict]:
    import csv

    refs = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            name = row.pop("name", None)
            if not name:
                raise DataError(f"{path}: every reference row needs a name")
            refs[name] = {k: (v if v not in ("", None) else None) for k, v in row.items()}
    return refs


def cmd_eval(args) -> int:
    from .eval import evaluate
    from .plotting import metric_histograms

    names, scores, bad = _read_scores(args.inputs)
    references = None
    if args.references:
        table = _read_references(args.references)
        references = [table.get(n) or table.get(Path(n).stem) or {} for n in names]
    try:
        report = evaluate(scores, names, references)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out)
    report.to_csv(out / "metrics.csv")
    report.counts_csv(out / "metric_counts.csv")
    metric_histograms(report, out / "metrics.png")
    line = (f"pieces {report.n_pieces} sc {report.means['sc']:.4f} pe_bits {report.means['pe']:.4f} "
            f"pce_bits {report.means['pce']:.4f}")
    if report.control:
        line += " " + " ".join(f"{k} {v:.4f}" for k, v in report.control.ratios.items())
    print(line)
    return EXIT_OK


def cmd_analyze_mi(args) -> int:
    from .eval import mutual_information_analysis
    from .plotting import matrix_heatmap

    rows = []
    for data in args.data:
        _, seqs, _ = _load_token_dir(data)
        rows.extend(s[1:] for s in seqs)  # the initial note is not part of the piece
    tokens = np.concatenate(rows)
    mats = mutual_information_analysis(tokens)
    out = Path(args.out)
    mats.to_csv(out)
    matrix_heatmap(mats.mi, mats.labels, out / "mi_nats.png", "mutual information (nats)")
    matrix_heatmap(mats.nmi, mats.labels, out / "nmi.png", "normalized mutual information", vmax=1.0)
    print(f"analyzed {mats.n_samples} notes; tables in {out}")
    return EXIT_OK


def cmd_roundtrip_check(args) -> int:
    names, scores, bad = _read_scores(args.inputs)
    vocab = _load_vocab(args.vocab) if args.vocab else build_vocab(scores)
    failing = 0
    lines = ["name,n_notes,violations,first"]
    for name, score in zip(names, scores):
        problems = roundtrip_violations(score, vocab)
        failing += bool(problems)
        first = problems[0].replace('"', "'") if problems else ""
        lines.append(f"{name},{score.n_notes},{len(problems)},\"{first}\"")
    if args.report:
        _write(Path(args.report), "\n".join(lines) + "\n")
    print(f"checked {len(scores)} file(s): {failing} with violations, {len(bad)} unreadable")
    if failing or bad:
        print(f"error: data: roundtrip violations in {failing} file(s), {len(bad)} unreadable",
              file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration as JSON and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="notediff", description="Note-level masked diffusion for symbolic music.")
    p.add_argument("--version", action="version", version=f"notediff {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("tokenize", parents=[common], help="MIDI files -> token index files")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--vocab", help="existing vocab.json (default: build from the inputs)")
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("build-vocab", parents=[common], help="write vocab.json for a corpus")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("filter", parents=[common], help="drop drum-only files; CSV report")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True, help="report CSV path")
    s.add_argument("--copy-to", help="copy kept files into this directory")
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("train", parents=[common], help="train on a token directory")
    s.add_argument("--config", help="JSON file with optional 'model' and 'train' sections")
    s.add_argument("--data", help="token directory written by 'tokenize'")
    s.add_argument("--out", help="checkpoint directory")
    s.add_argument("--resume", help="continue from this checkpoint")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--max-len", type=int)
    s.add_argument("--d", type=int)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--log-every", type=int, default=50)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", parents=[common], help="sample pieces from a checkpoint")
    s.add_argument("--ckpt", help="checkpoint directory (with vocab.json)")
    s.add_argument("--notes", type=int, default=64)
    s.add_argument("--steps", type=int, default=8, help="decoding passes per note")
    s.add_argument("--clamp", action="append", metavar="ATTR=VALUE",
                   help="fix an attribute for every note, e.g. instrument=Piano, tempo=120")
    s.add_argument("--mode", choices=("argmax", "sample"), default="argmax")
    s.add_argument("--strategy", choices=("confidence", "random"), default="confidence")
    s.add_argument("--open-with", help="token file whose first note opens each piece")
    s.add_argument("--pieces", type=int, default=1)
    s.add_argument("--tokens-out", action="store_true", help="also write .tok files")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output MIDI path")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", parents=[common], help="quality and control metrics")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--references", help="CSV with name,tempo,key,time_signature,instruments")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze-mi", parents=[common], help="attribute MI / NMI / H(Y|X) tables")
    s.add_argument("data", nargs="+", help="token directories")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_analyze_mi)

    s = sub.add_parser("roundtrip-check", parents=[common], help="verify encode/decode tolerances")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--vocab")
    s.add_argument("--report", help="per-file CSV")
    s.set_defaults(func=cmd_roundtrip_check)
    return p


def _fail(kind: str, code: int, message) -> int:
    text = " ".join(str(message).split())
    print(f"error: {kind}: {text}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    if not getattr(args, "command", None):
        return _fail("usage", EXIT_USAGE, "missing subcommand")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.dump_config and args.func not in (cmd_train, cmd_generate):
        print(json.dumps({k: v for k, v in vars(args).items() if k != "func"}, indent=1, sort_keys=True))
        return EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except (DataError, MidiParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _fail("data", EXIT_DATA, exc)
    except ValueError as exc:
        # config and checkpoint problems surface as ValueError from the library
        return _fail("data", EXIT_DATA, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail("runtime", EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
