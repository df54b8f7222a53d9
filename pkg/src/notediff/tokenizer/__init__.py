from .chords import CHORD_LABELS, detect_chords
from .encoding import (Encoding, FilterReport, NoteEvent, ScoreMeta, decode, decode_notes,
                       encode, filter_corpus, ordered_notes, roundtrip_violations,
                       tokens_from_text, tokens_to_text)
from .grid import GridConfig, MeasureGrid
from .midi import MidiParseError, MidiWarning, parse_midi, read_midi, write_midi
from .score import DRUMS, Note, Score, Track
from .vocab import ATTRIBUTES, K, AttributeTable, AttributeVocab, build_vocab, make_vocab

__all__ = [
    "ATTRIBUTES", "AttributeTable", "AttributeVocab", "CHORD_LABELS", "DRUMS", "Encoding",
    "FilterReport", "GridConfig", "K", "MeasureGrid", "MidiParseError", "MidiWarning", "Note",
    "NoteEvent", "Score", "ScoreMeta", "Track", "build_vocab", "decode", "decode_notes",
    "detect_chords", "encode", "filter_corpus", "make_vocab", "ordered_notes", "parse_midi",
    "read_midi", "roundtrip_violations", "tokens_from_text", "tokens_to_text", "write_midi",
]
