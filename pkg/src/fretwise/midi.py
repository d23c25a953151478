"""Standard MIDI File reading/writing for the tablature pipeline.

Supports SMF types 0 and 1. Reading pairs note-on/note-off events into
`Note` objects with absolute tick onsets; writing emits canonical type-1
files, either a single melody track or the six-track layout where track i
carries the notes assigned to string i.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import (
    NUM_STRINGS,
    Note,
    TabNote,
    TabSequence,
    Tuning,
    canonical_sort,
    fret_for,
    string_collisions,
)
from .errors import MidiFormatError, MidiTruncationError

log = logging.getLogger(__name__)

_HEADER_MAGIC = b"MThd"
_TRACK_MAGIC = b"MTrk"
_META_TEMPO = 0x51
_META_END_OF_TRACK = 0x2F


@dataclass
class MidiDocument:
    """Parsed note content of an SMF file."""

    ticks_per_quarter: int
    tracks: list[list[Note]] = field(default_factory=list)
    tempo_events: list[tuple[int, int]] = field(default_factory=list)

    def all_notes(self) -> list[Note]:
        merged: list[Note] = []
        for track in self.tracks:
            merged.extend(track)
        return canonical_sort(merged)


class _Reader:
    """Bounds-checked cursor over the raw bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def need(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise MidiTruncationError(f"unexpected end of data while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self, what: str = "byte") -> int:
        return self.need(1, what)[0]

    def u16(self, what: str = "uint16") -> int:
        b = self.need(2, what)
        return (b[0] << 8) | b[1]

    def u32(self, what: str = "uint32") -> int:
        b = self.need(4, what)
        return (b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3]

    def vlq(self) -> int:
        # Variable-length quantity: 7 bits per byte, high bit = continuation,
        # at most 4 bytes per the SMF spec.
        value = 0
        for i in range(4):
            byte = self.u8("variable-length quantity")
            value = (value << 7) | (byte & 0x7F)
            if not byte & 0x80:
                return value
        raise MidiFormatError(f"variable-length quantity longer than 4 bytes at byte {self.pos}")


def encode_vlq(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise ValueError(f"value {value} not representable as a variable-length quantity")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _channel_data_len(status: int) -> int:
    kind = status & 0xF0
    return 1 if kind in (0xC0, 0xD0) else 2


class _NotePairer:
    """Pairs note-ons with note-offs, merging channels within one track."""

    def __init__(self):
        self.open: dict[int, tuple[int, int]] = {}  # pitch -> (onset, velocity)
        self.notes: list[Note] = []

    def _close(self, pitch: int, tick: int) -> None:
        onset, velocity = self.open.pop(pitch)
        self.notes.append(Note(onset, max(1, tick - onset), pitch, velocity))

    def note_on(self, pitch: int, velocity: int, tick: int) -> None:
        if velocity == 0:
            self.note_off(pitch, tick)
            return
        # A second note-on for an already-sounding pitch closes the first
        # at the new onset.
        if pitch in self.open:
            self._close(pitch, tick)
        self.open[pitch] = (tick, velocity)

    def note_off(self, pitch: int, tick: int) -> None:
        if pitch in self.open:
            self._close(pitch, tick)

    def finish(self, end_tick: int) -> list[Note]:
        for pitch in sorted(self.open):
            self._close(pitch, end_tick)
        return canonical_sort(self.notes)


def _parse_track(reader: _Reader, length: int, tempo_events: list[tuple[int, int]]) -> list[Note]:
    end = reader.pos + length
    if end > len(reader.data):
        raise MidiTruncationError("track chunk length exceeds data", reader.pos)
    tick = 0
    running_status: int | None = None
    pairer = _NotePairer()
    while reader.pos < end:
        tick += reader.vlq()
        status = reader.u8("event status")
        if status < 0x80:
            # Running status: the byte we just read is the first data byte.
            if running_status is None:
                raise MidiFormatError(f"data byte {status:#04x} with no running status at byte {reader.pos - 1}")
            reader.pos -= 1
            status = running_status
        if status == 0xFF:
            running_status = None
            meta_type = reader.u8("meta type")
            meta = reader.need(reader.vlq(), "meta payload")
            if meta_type == _META_TEMPO and len(meta) == 3:
                tempo_events.append((tick, (meta[0] << 16) | (meta[1] << 8) | meta[2]))
            if meta_type == _META_END_OF_TRACK:
                break
        elif status in (0xF0, 0xF7):
            running_status = None
            reader.need(reader.vlq(), "sysex payload")
        elif status >= 0xF0:
            raise MidiFormatError(f"unsupported system message {status:#04x} at byte {reader.pos - 1}")
        else:
            running_status = status
            data = reader.need(_channel_data_len(status), "channel message data")
            if any(b & 0x80 for b in data):
                raise MidiFormatError(f"data byte with high bit set at byte {reader.pos - 1}")
            kind = status & 0xF0
            if kind == 0x90:
                pairer.note_on(data[0], data[1], tick)
            elif kind == 0x80:
                pairer.note_off(data[0], tick)
    reader.pos = end
    return pairer.finish(tick)


def read_midi(data: bytes) -> MidiDocument:
    """Parse an SMF type 0 or 1 file into note tracks plus tempo events."""
    reader = _Reader(data)
    if reader.need(4, "header magic") != _HEADER_MAGIC:
        raise MidiFormatError("not a Standard MIDI File: missing MThd header")
    header_len = reader.u32("header length")
    if header_len < 6:
        raise MidiFormatError(f"header chunk too short ({header_len} bytes)")
    fmt = reader.u16("format")
    ntrks = reader.u16("track count")
    division = reader.u16("division")
    reader.need(header_len - 6, "header padding")
    if fmt not in (0, 1):
        raise MidiFormatError(f"unsupported SMF format {fmt} (only 0 and 1)")
    if division & 0x8000:
        raise MidiFormatError("SMPTE time division is not supported")
    if division == 0:
        raise MidiFormatError("ticks-per-quarter division must be positive")

    doc = MidiDocument(ticks_per_quarter=division)
    tracks_read = 0
    while tracks_read < ntrks:
        magic = reader.need(4, "chunk magic")
        length = reader.u32("chunk length")
        if magic != _TRACK_MAGIC:
            reader.need(length, "unknown chunk payload")  # alien chunks are skipped
            continue
        doc.tracks.append(_parse_track(reader, length, doc.tempo_events))
        tracks_read += 1
    doc.tempo_events.sort(key=lambda ev: ev[0])
    return doc


# --- writing ---------------------------------------------------------------


def _note_track_bytes(notes: Iterable[Note]) -> bytes:
    # Note-offs sort before note-ons at the same tick so back-to-back notes
    # of one pitch re-trigger instead of truncating each other.
    events: list[tuple[int, int, int, int]] = []  # (tick, order, pitch, velocity)
    for n in notes:
        events.append((n.onset, 1, n.pitch, n.velocity))
        events.append((n.offset, 0, n.pitch, 0))
    events.sort()
    out = bytearray()
    prev_tick = 0
    for tick, order, pitch, velocity in events:
        out += encode_vlq(tick - prev_tick)
        prev_tick = tick
        status = 0x90 if order else 0x80
        out += bytes((status, pitch, velocity))
    out += b"\x00\xff\x2f\x00"
    return bytes(out)


def _tempo_track_bytes(tempo_events: Sequence[tuple[int, int]]) -> bytes:
    out = bytearray()
    prev_tick = 0
    for tick, usec_per_quarter in sorted(tempo_events):
        out += encode_vlq(tick - prev_tick)
        prev_tick = tick
        out += bytes((0xFF, _META_TEMPO, 3))
        out += usec_per_quarter.to_bytes(3, "big")
    out += b"\x00\xff\x2f\x00"
    return bytes(out)


def _chunk(magic: bytes, payload: bytes) -> bytes:
    return magic + len(payload).to_bytes(4, "big") + payload


def _file_bytes(track_payloads: list[bytes], ticks_per_quarter: int, fmt: int) -> bytes:
    if not 0 < ticks_per_quarter <= 0x7FFF:
        raise ValueError(f"ticks_per_quarter {ticks_per_quarter} out of range")
    header = fmt.to_bytes(2, "big") + len(track_payloads).to_bytes(2, "big") + ticks_per_quarter.to_bytes(2, "big")
    out = _chunk(_HEADER_MAGIC, header)
    for payload in track_payloads:
        out += _chunk(_TRACK_MAGIC, payload)
    return out


def write_single_track(
    notes: Sequence[Note],
    ticks_per_quarter: int,
    tempo_events: Sequence[tuple[int, int]] = (),
) -> bytes:
    """Write a one-track (type 0) melody file, e.g. as system input."""
    payload = bytearray()
    if tempo_events:
        payload += _tempo_track_bytes(tempo_events)[:-4]  # strip EOT, notes follow
    payload += _note_track_bytes(canonical_sort(notes))
    return _file_bytes([bytes(payload)], ticks_per_quarter, fmt=0)


def write_six_track(
    tab: TabSequence,
    ticks_per_quarter: int,
    tempo_events: Sequence[tuple[int, int]] = (),
) -> bytes:
    """Write a type-1 file with one track per string, ordered string 1..6.

    A conductor track is prepended only when tempo events are supplied, so
    the note-bearing tracks stay in string order.
    """
    by_string: dict[int, list[Note]] = {s: [] for s in range(1, NUM_STRINGS + 1)}
    for tn in tab.notes:
        by_string[tn.string].append(tn.note)
    payloads = []
    if tempo_events:
        payloads.append(_tempo_track_bytes(tempo_events))
    payloads.extend(_note_track_bytes(by_string[s]) for s in range(1, NUM_STRINGS + 1))
    return _file_bytes(payloads, ticks_per_quarter, fmt=1)


def _pick_string_tracks(tracks: list[list[Note]]) -> list[list[Note]]:
    if len(tracks) == NUM_STRINGS:
        return tracks
    extra = len(tracks) - NUM_STRINGS
    # Conductor/meta tracks conventionally lead; skip them even when some
    # string tracks are empty.
    if extra > 0 and all(not t for t in tracks[:extra]):
        return tracks[extra:]
    with_notes = [t for t in tracks if t]
    if len(with_notes) == NUM_STRINGS:
        return with_notes
    raise MidiFormatError(
        f"cannot map {len(tracks)} tracks ({len(with_notes)} with notes) onto {NUM_STRINGS} strings"
    )


def read_six_track(data: bytes, tuning: Tuning) -> TabSequence:
    """Read a six-track file back into a TabSequence (track i -> string i).

    Notes landing outside [0, max_fret] for their track's string are kept
    but flagged: ground-truth corpora occasionally contain detunings.
    """
    doc = read_midi(data)
    string_tracks = _pick_string_tracks(doc.tracks)
    tab_notes: list[TabNote] = []
    unplayable = 0
    for index, track in enumerate(string_tracks):
        string = index + 1
        for note in track:
            fret = fret_for(note.pitch, string, tuning)
            if not 0 <= fret <= tuning.max_fret:
                unplayable += 1
                log.warning(
                    "pitch %d on string %d gives fret %d outside [0, %d]",
                    note.pitch, string, fret, tuning.max_fret,
                )
            tab_notes.append(TabNote(note, string, fret))
    flagged = unplayable > 0 or bool(string_collisions(tab_notes))
    return TabSequence(tuning, tuple(tab_notes), unvalidated=flagged)
