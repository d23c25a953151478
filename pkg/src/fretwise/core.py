"""Fretboard arithmetic and the note/tablature data model.

String indexing is 1-based: string 1 is the highest-pitched (high E in
standard tuning), string 6 the lowest. Fret = pitch - open pitch of the
assigned string, so every (pitch, string) pair maps to exactly one fret.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

NUM_STRINGS = 6
DEFAULT_MAX_FRET = 21


@dataclass(frozen=True)
class Tuning:
    """Open-string MIDI pitches, ordered string 1 (highest) to string 6."""

    open_pitches: tuple[int, ...]
    max_fret: int = DEFAULT_MAX_FRET

    def __post_init__(self) -> None:
        if len(self.open_pitches) != NUM_STRINGS:
            raise ValueError(f"expected {NUM_STRINGS} open pitches, got {len(self.open_pitches)}")
        for p in self.open_pitches:
            if not 0 <= p <= 127:
                raise ValueError(f"open pitch {p} outside MIDI range")
        if any(nxt >= prev for prev, nxt in zip(self.open_pitches, self.open_pitches[1:])):
            raise ValueError("open pitches must decrease strictly from string 1 to string 6")
        if self.max_fret < 0:
            raise ValueError("max_fret must be non-negative")
        object.__setattr__(self, "open_pitches", tuple(self.open_pitches))

    def open_pitch(self, string: int) -> int:
        if not 1 <= string <= NUM_STRINGS:
            raise ValueError(f"string must be in 1..{NUM_STRINGS}, got {string}")
        return self.open_pitches[string - 1]


STANDARD_TUNING = Tuning((64, 59, 55, 50, 45, 40))


@dataclass(frozen=True)
class Note:
    """A pitched event positioned in integer MIDI ticks."""

    onset: int
    duration: int
    pitch: int
    velocity: int

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside MIDI range")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")

    @property
    def offset(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True)
class TabNote:
    """A note plus its string assignment and the derived fret."""

    note: Note
    string: int
    fret: int

    def __post_init__(self) -> None:
        if not 1 <= self.string <= NUM_STRINGS:
            raise ValueError(f"string must be in 1..{NUM_STRINGS}, got {self.string}")

    @classmethod
    def assign(cls, note: Note, string: int, tuning: Tuning) -> "TabNote":
        return cls(note=note, string=string, fret=fret_for(note.pitch, string, tuning))

    def playable(self, tuning: Tuning) -> bool:
        return 0 <= self.fret <= tuning.max_fret


def fret_for(pitch: int, string: int, tuning: Tuning) -> int:
    """Fret implied by placing `pitch` on `string`; may be negative or past max_fret."""
    return pitch - tuning.open_pitch(string)


def feasible_strings(pitch: int, tuning: Tuning) -> set[int]:
    """Strings on which `pitch` lands within [0, max_fret]. Empty means unplayable."""
    return {
        s
        for s in range(1, NUM_STRINGS + 1)
        if 0 <= fret_for(pitch, s, tuning) <= tuning.max_fret
    }


def _sort_key(item: Union[Note, TabNote]):
    note = item.note if isinstance(item, TabNote) else item
    return (note.onset, -note.pitch, -note.duration, -note.velocity)


def canonical_sort(notes: Iterable[Union[Note, TabNote]]) -> list:
    """Stable canonical order: onset asc, then pitch/duration/velocity desc."""
    return sorted(notes, key=_sort_key)


def string_collisions(notes: Sequence[TabNote]) -> list[tuple[TabNote, TabNote]]:
    """Pairs of notes sharing a string with overlapping [onset, offset) intervals."""
    collisions = []
    by_string: dict[int, list[TabNote]] = {}
    for tn in notes:
        by_string.setdefault(tn.string, []).append(tn)
    for group in by_string.values():
        group.sort(key=lambda tn: tn.note.onset)
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                if b.note.onset >= a.note.offset:
                    break
                collisions.append((a, b))
    return collisions


@dataclass(frozen=True)
class TabSequence:
    """A tuning plus canonically ordered string-assigned notes.

    `unvalidated=True` marks raw assignments (e.g. network output before
    post-processing) that may contain same-string overlaps or out-of-range
    frets; validated sequences are guaranteed collision-free.
    """

    tuning: Tuning
    notes: tuple[TabNote, ...] = field(default_factory=tuple)
    unvalidated: bool = False

    def __post_init__(self) -> None:
        ordered = tuple(canonical_sort(self.notes))
        object.__setattr__(self, "notes", ordered)
        for tn in ordered:
            expected = fret_for(tn.note.pitch, tn.string, self.tuning)
            if tn.fret != expected:
                raise ValueError(
                    f"fret {tn.fret} inconsistent with pitch {tn.note.pitch} "
                    f"on string {tn.string} (expected {expected})"
                )
        if not self.unvalidated:
            clashes = string_collisions(ordered)
            if clashes:
                a, b = clashes[0]
                raise ValueError(
                    f"overlapping notes on string {a.string} at ticks "
                    f"{a.note.onset} and {b.note.onset}; pass unvalidated=True to keep them"
                )

    def __len__(self) -> int:
        return len(self.notes)

    def validated(self) -> "TabSequence":
        """Re-check the collision invariant and drop the unvalidated flag."""
        return TabSequence(self.tuning, self.notes, unvalidated=False)

    def plain_notes(self) -> list[Note]:
        return [tn.note for tn in self.notes]
