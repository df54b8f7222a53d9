"""Standard MIDI File reading (type 0/1) and writing.

The reader is hand-rolled so that structural errors can carry the byte offset
where they were found. Writing goes through ``mido``.
"""
from __future__ import annotations

import io
import struct
import warnings
from collections import defaultdict, deque

import mido

from .score import DEFAULT_TEMPO, DEFAULT_TIME_SIGNATURE, Note, Score, Track

DRUM_CHANNEL = 9


class MidiParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MidiWarning(UserWarning):
    pass


def _read_varlen(data: bytes, pos: int, end: int) -> tuple[int, int]:
    value = 0
    for _ in range(4):
        if pos >= end:
            raise MidiParseError("truncated variable-length quantity", pos)
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


def _split_chunks(data: bytes) -> tuple[int, int, list[tuple[int, int]]]:
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", data[4:8])
    if hlen < 6:
        raise MidiParseError(f"header length {hlen} < 6", 4)
    if 8 + hlen > len(data):
        raise MidiParseError("header chunk exceeds file size", 4)
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiParseError("ticks per quarter note is zero", 12)

    tracks = []
    pos = 8 + hlen
    while pos < len(data):
        if pos + 8 > len(data):
            raise MidiParseError("truncated chunk header", pos)
        cid = data[pos:pos + 4]
        (clen,) = struct.unpack(">I", data[pos + 4:pos + 8])
        if pos + 8 + clen > len(data):
            raise MidiParseError(f"chunk {cid!r} length {clen} exceeds file size", pos + 4)
        if cid == b"MTrk":
            tracks.append((pos + 8, pos + 8 + clen))
        pos += 8 + clen
    return fmt, division, tracks


def _parse_track(data, start, end, track_idx, tempos, signatures, groups, dropped):
    pos = start
    tick = 0
    status = None
    program = [0] * 16
    active: dict[tuple[int, int], deque] = defaultdict(deque)

    def close(ch, pitch, off_tick):
        queue = active.get((ch, pitch))
        if not queue:
            dropped.append(("note-off without note-on", off_tick))
            return
        onset, velocity, prog = queue.popleft()
        key = (track_idx, ch, prog)
        groups[key].append(Note(onset, pitch, max(1, off_tick - onset), velocity))

    while pos < end:
        delta, pos = _read_varlen(data, pos, end)
        tick += delta
        if pos >= end:
            raise MidiParseError("truncated event", pos)
        b = data[pos]
        if b == 0xFF:
            if pos + 2 > end:
                raise MidiParseError("truncated meta event", pos)
            mtype = data[pos + 1]
            length, body = _read_varlen(data, pos + 2, end)
            if body + length > end:
                raise MidiParseError("meta event exceeds track chunk", pos)
            payload = data[body:body + length]
            if mtype == 0x51 and length == 3:
                uspq = int.from_bytes(payload, "big")
                if uspq > 0:
                    tempos.append((tick, 60_000_000 / uspq))
            elif mtype == 0x58 and length >= 2:
                signatures.append((tick, payload[0], 2 ** payload[1]))
            elif mtype == 0x2F:
                pos = body + length
                break
            pos = body + length
            continue
        if b in (0xF0, 0xF7):
            length, body = _read_varlen(data, pos + 1, end)
            if body + length > end:
                raise MidiParseError("sysex event exceeds track chunk", pos)
            pos = body + length
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise MidiParseError(f"unexpected system message 0x{b:02X} in track", pos)
            status = b
            pos += 1
        elif status is None:
            raise MidiParseError("data byte without running status", pos)
        kind, ch = status & 0xF0, status & 0x0F
        nbytes = 1 if kind in (0xC0, 0xD0) else 2
        if pos + nbytes > end:
            raise MidiParseError("truncated channel message", pos)
        d1 = data[pos]
        d2 = data[pos + 1] if nbytes == 2 else 0
        if d1 & 0x80 or d2 & 0x80:
            raise MidiParseError("data byte has high bit set", pos)
        pos += nbytes
        if kind == 0x90 and d2 > 0:
            active[(ch, d1)].append((tick, d2, program[ch]))
        elif kind == 0x80 or kind == 0x90:
            close(ch, d1, tick)
        elif kind == 0xC0:
            program[ch] = d1

    for (ch, pitch), queue in active.items():
        for onset, _, _ in queue:
            dropped.append(("note-on never released", onset))


def _normalise_map(events, default):
    # stable sort keeps file order for same-tick events; the last one wins
    out: dict[int, tuple] = {}
    for ev in sorted(events, key=lambda e: e[0]):
        out[ev[0]] = ev
    merged = [out[t] for t in sorted(out)]
    if not merged or merged[0][0] > 0:
        merged.insert(0, (0, *default))
    return merged


def parse_midi(data: bytes) -> Score:
    """Parse SMF type 0/1 bytes into a :class:`Score`.

    Missing tempo defaults to 120 BPM and missing time signature to 4/4.
    Unmatched note-offs and never-released note-ons are dropped with a
    :class:`MidiWarning`.
    """
    _, division, chunks = _split_chunks(data)
    tempos: list = []
    signatures: list = []
    groups: dict = defaultdict(list)
    dropped: list = []
    for idx, (start, end) in enumerate(chunks):
        _parse_track(data, start, end, idx, tempos, signatures, groups, dropped)
    if dropped:
        warnings.warn(f"dropped {len(dropped)} unresolvable note event(s); first: "
                      f"{dropped[0][0]} at tick {dropped[0][1]}", MidiWarning, stacklevel=2)

    tracks = []
    for (track_idx, ch, prog) in sorted(groups, key=lambda k: (k[2] if k[1] != DRUM_CHANNEL else 128, k[0], k[1])):
        notes = sorted(groups[(track_idx, ch, prog)])
        is_drum = ch == DRUM_CHANNEL
        tracks.append(Track(program=0 if is_drum else prog, is_drum=is_drum, notes=notes))
    return Score(
        ticks_per_quarter=division,
        tempo_map=[(t, float(b)) for t, b in _normalise_map(tempos, (DEFAULT_TEMPO,))],
        time_signatures=_normalise_map(signatures, DEFAULT_TIME_SIGNATURE),
        tracks=tracks,
    )


def read_midi(path) -> Score:
    with open(path, "rb") as fh:
        return parse_midi(fh.read())


def _channels():
    while True:
        for ch in range(16):
            if ch != DRUM_CHANNEL:
                yield ch


def _to_delta(events):
    track = mido.MidiTrack()
    last = 0
    for tick, _, msg in sorted(events, key=lambda e: (e[0], e[1])):
        track.append(msg.copy(time=tick - last))
        last = tick
    return track


def score_to_midi(score: Score) -> mido.MidiFile:
    mid = mido.MidiFile(type=1, ticks_per_beat=score.ticks_per_quarter)
    meta = []
    for tick, bpm in score.tempo_map:
        meta.append((tick, 0, mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(bpm))))
    for tick, num, den in score.time_signatures:
        meta.append((tick, 1, mido.MetaMessage("time_signature", numerator=num, denominator=den)))
    conductor = _to_delta(meta)
    conductor.append(mido.MetaMessage("end_of_track", time=0))
    mid.tracks.append(conductor)

    channels = _channels()
    for track in score.tracks:
        ch = DRUM_CHANNEL if track.is_drum else next(channels)
        events = []
        if not track.is_drum:
            events.append((0, 0, mido.Message("program_change", channel=ch, program=track.program)))
        for n in track.notes:
            # offs sort before ons at the same tick so repeated pitches don't swallow each other
            events.append((n.onset, 2, mido.Message("note_on", channel=ch, note=n.pitch,
                                                    velocity=max(1, n.velocity))))
            events.append((n.onset + n.duration, 1, mido.Message("note_off", channel=ch,
                                                                 note=n.pitch, velocity=0)))
        mt = _to_delta(events)
        mt.append(mido.MetaMessage("end_of_track", time=0))
        mid.tracks.append(mt)
    return mid


def write_midi(score: Score) -> bytes:
    buf = io.BytesIO()
    score_to_midi(score).save(file=buf)
    return buf.getvalue()
