"""Five-token-per-note encoding of tablature sequences.

Each note becomes (TIME_SHIFT, STRING, PITCH, VELOCITY, DURATION), in that
order, so string slots sit at token indices 5k+1. Time values are
normalized to a fixed internal resolution of 192 ticks per quarter note
(24 ticks per 1/8 beat) before quantization, giving one vocabulary across
source files of any resolution.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Note, TabNote, TabSequence, Tuning, string_collisions
from .errors import TokenStructureError

PAD = "PAD"
BOS = "BOS"
EOS = "EOS"
TIME_SHIFT = "TIME_SHIFT"
STRING = "STRING"
STRING_MASK = "STRING_MASK"
PITCH = "PITCH"
VELOCITY = "VELOCITY"
DURATION = "DURATION"

TOKENS_PER_NOTE = 5
INTERNAL_TPQ = 192  # quarter note in internal ticks
_EIGHTH = INTERNAL_TPQ // 8  # 24 ticks
_FINE_LIMIT = 4 * INTERNAL_TPQ  # 1/8-beat steps below this
_COARSE_LIMIT = 12 * INTERNAL_TPQ  # 1/2-beat steps up to here, overflow beyond
_OVERFLOW_TICKS = _COARSE_LIMIT + _EIGHTH * 4  # canonical value for the overflow bin

_NUM_VELOCITY_BINS = 8
_VOCAB_VERSION = 1


def _time_grid(include_zero: bool) -> list[int]:
    fine_start = 0 if include_zero else _EIGHTH
    fine = list(range(fine_start, _FINE_LIMIT, _EIGHTH))
    coarse = list(range(_FINE_LIMIT, _COARSE_LIMIT + 1, INTERNAL_TPQ // 2))
    return fine + coarse


TIME_SHIFT_GRID = _time_grid(include_zero=True)
DURATION_GRID = _time_grid(include_zero=False)


def _nearest(grid: Sequence[int], value: int) -> int:
    i = bisect_left(grid, value)
    if i == 0:
        return grid[0]
    if i == len(grid):
        return grid[-1]
    lo, hi = grid[i - 1], grid[i]
    return lo if value - lo <= hi - value else hi


def velocity_bin(velocity: int) -> int:
    return (velocity - 1) * _NUM_VELOCITY_BINS // 127


def velocity_from_bin(bin_index: int) -> int:
    return 1 + round((bin_index + 0.5) * 126 / _NUM_VELOCITY_BINS)


class Vocabulary:
    """Bijective token table: id <-> (family, value)."""

    def __init__(self, entries: Sequence[tuple[str, int | None]]):
        self.entries: tuple[tuple[str, int | None], ...] = tuple(
            (family, value) for family, value in entries
        )
        self._ids: dict[tuple[str, int | None], int] = {}
        for token_id, entry in enumerate(self.entries):
            if entry in self._ids:
                raise ValueError(f"duplicate vocabulary entry {entry}")
            self._ids[entry] = token_id
        self.pad_id = self._ids[(PAD, None)]
        self.bos_id = self._ids[(BOS, None)]
        self.eos_id = self._ids[(EOS, None)]
        self.mask_id = self._ids[(STRING_MASK, None)]
        self.string_ids = tuple(self._ids[(STRING, s)] for s in range(1, 7))

    @classmethod
    def default(cls) -> "Vocabulary":
        entries: list[tuple[str, int | None]] = [
            (PAD, None),
            (BOS, None),
            (EOS, None),
            (STRING_MASK, None),
        ]
        entries.extend((STRING, s) for s in range(1, 7))
        entries.extend((PITCH, p) for p in range(128))
        entries.extend((VELOCITY, b) for b in range(_NUM_VELOCITY_BINS))
        entries.extend((TIME_SHIFT, t) for t in TIME_SHIFT_GRID + [_OVERFLOW_TICKS])
        entries.extend((DURATION, d) for d in DURATION_GRID + [_OVERFLOW_TICKS])
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def id_of(self, family: str, value: int | None = None) -> int:
        return self._ids[(family, value)]

    def family_of(self, token_id: int) -> str:
        return self.entries[token_id][0]

    def value_of(self, token_id: int) -> int | None:
        return self.entries[token_id][1]

    def to_json(self) -> str:
        table = [
            {"id": i, "family": family, "value": value}
            for i, (family, value) in enumerate(self.entries)
        ]
        return json.dumps({"version": _VOCAB_VERSION, "tokens": table}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        if payload.get("version") != _VOCAB_VERSION:
            raise ValueError(f"unsupported vocabulary version {payload.get('version')}")
        table = sorted(payload["tokens"], key=lambda row: row["id"])
        if [row["id"] for row in table] != list(range(len(table))):
            raise ValueError("vocabulary ids must be 0..n-1 without gaps")
        return cls([(row["family"], row["value"]) for row in table])

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True)
class TokenSequence:
    """A flat id stream of whole five-token note frames."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.ids) % TOKENS_PER_NOTE != 0:
            raise TokenStructureError(
                f"token count {len(self.ids)} is not a multiple of {TOKENS_PER_NOTE}"
            )

    @property
    def note_count(self) -> int:
        return len(self.ids) // TOKENS_PER_NOTE

    def __len__(self) -> int:
        return len(self.ids)

    def string_positions(self) -> range:
        return range(1, len(self.ids), TOKENS_PER_NOTE)


_FAMILY_CYCLE = (TIME_SHIFT, STRING, PITCH, VELOCITY, DURATION)


class StructuredTokenizer:
    """Converts between TabSequences and token id streams.

    `clamp_count` tallies time values that exceeded the largest bin and
    were mapped to the overflow token.
    """

    def __init__(self, vocab: Vocabulary | None = None):
        self.vocab = vocab or Vocabulary.default()
        self.clamp_count = 0

    # -- quantization ------------------------------------------------------

    def _to_internal(self, ticks: int, ticks_per_quarter: int) -> int:
        if ticks_per_quarter == INTERNAL_TPQ:
            return ticks
        return round(ticks * INTERNAL_TPQ / ticks_per_quarter)

    def _from_internal(self, ticks: int, ticks_per_quarter: int) -> int:
        if ticks_per_quarter == INTERNAL_TPQ:
            return ticks
        return round(ticks * ticks_per_quarter / INTERNAL_TPQ)

    def _time_shift_id(self, internal_ticks: int) -> int:
        if internal_ticks > TIME_SHIFT_GRID[-1]:
            self.clamp_count += 1
            return self.vocab.id_of(TIME_SHIFT, _OVERFLOW_TICKS)
        return self.vocab.id_of(TIME_SHIFT, _nearest(TIME_SHIFT_GRID, internal_ticks))

    def _duration_id(self, internal_ticks: int) -> int:
        if internal_ticks > DURATION_GRID[-1]:
            self.clamp_count += 1
            return self.vocab.id_of(DURATION, _OVERFLOW_TICKS)
        return self.vocab.id_of(DURATION, _nearest(DURATION_GRID, internal_ticks))

    def _note_frame(self, note: Note, string_id: int, prev_onset: int, ticks_per_quarter: int) -> list[int]:
        onset = self._to_internal(note.onset, ticks_per_quarter)
        prev = self._to_internal(prev_onset, ticks_per_quarter)
        return [
            self._time_shift_id(onset - prev),
            string_id,
            self.vocab.id_of(PITCH, note.pitch),
            self.vocab.id_of(VELOCITY, velocity_bin(note.velocity)),
            self._duration_id(self._to_internal(note.duration, ticks_per_quarter)),
        ]

    # -- public operations ---------------------------------------------------

    def tokenize(self, tab: TabSequence, ticks_per_quarter: int = INTERNAL_TPQ) -> TokenSequence:
        """Encode an assigned sequence; notes are already in canonical order."""
        ids: list[int] = []
        prev_onset = 0
        for tn in tab.notes:
            ids.extend(
                self._note_frame(tn.note, self.vocab.id_of(STRING, tn.string), prev_onset, ticks_per_quarter)
            )
            prev_onset = tn.note.onset
        return TokenSequence(tuple(ids))

    def tokenize_unassigned(
        self, notes: Sequence[Note], ticks_per_quarter: int = INTERNAL_TPQ
    ) -> TokenSequence:
        """Encode plain notes with STRING_MASK in every string slot."""
        ids: list[int] = []
        prev_onset = 0
        for note in notes:
            ids.extend(self._note_frame(note, self.vocab.mask_id, prev_onset, ticks_per_quarter))
            prev_onset = note.onset
        return TokenSequence(tuple(ids))

    def validate_cycle(self, tokens: TokenSequence, allow_mask: bool = True) -> None:
        """Check the TIME_SHIFT/STRING/PITCH/VELOCITY/DURATION family cycle."""
        for index, token_id in enumerate(tokens.ids):
            family = self.vocab.family_of(token_id)
            expected = _FAMILY_CYCLE[index % TOKENS_PER_NOTE]
            if family == expected:
                continue
            if expected == STRING and family == STRING_MASK:
                if allow_mask:
                    continue
                raise TokenStructureError("STRING_MASK not allowed here", index)
            raise TokenStructureError(f"expected {expected} token, found {family}", index)

    def mask_strings(self, tokens: TokenSequence) -> TokenSequence:
        """Replace every STRING token with STRING_MASK; idempotent."""
        self.validate_cycle(tokens)
        string_ids = set(self.vocab.string_ids)
        ids = tuple(
            self.vocab.mask_id if token_id in string_ids else token_id for token_id in tokens.ids
        )
        return TokenSequence(ids)

    def detokenize(
        self,
        tokens: TokenSequence,
        tuning: Tuning,
        ticks_per_quarter: int = INTERNAL_TPQ,
    ) -> TabSequence:
        """Rebuild a (quantized) TabSequence; rejects masked string slots."""
        self.validate_cycle(tokens, allow_mask=False)
        notes: list[TabNote] = []
        onset_internal = 0
        for k in range(tokens.note_count):
            frame = tokens.ids[k * TOKENS_PER_NOTE : (k + 1) * TOKENS_PER_NOTE]
            ts, string_tok, pitch_tok, vel_tok, dur_tok = frame
            onset_internal += self.vocab.value_of(ts)
            note = Note(
                onset=self._from_internal(onset_internal, ticks_per_quarter),
                duration=max(1, self._from_internal(self.vocab.value_of(dur_tok), ticks_per_quarter)),
                pitch=self.vocab.value_of(pitch_tok),
                velocity=velocity_from_bin(self.vocab.value_of(vel_tok)),
            )
            notes.append(TabNote.assign(note, self.vocab.value_of(string_tok), tuning))
        flagged = bool(string_collisions(notes)) or any(not tn.playable(tuning) for tn in notes)
        return TabSequence(tuning, tuple(notes), unvalidated=flagged)
