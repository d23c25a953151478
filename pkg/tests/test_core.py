import random

import pytest
from hypothesis import given, strategies as st

from fretwise.core import (
    NUM_STRINGS,
    Note,
    STANDARD_TUNING,
    TabNote,
    TabSequence,
    Tuning,
    canonical_sort,
    feasible_strings,
    fret_for,
    string_collisions,
)


def test_standard_tuning_constant():
    assert STANDARD_TUNING.open_pitches == (64, 59, 55, 50, 45, 40)
    assert STANDARD_TUNING.max_fret == 21


@pytest.mark.parametrize(
    "pitch,string,expected",
    [
        (69, 1, 5),  # A4 on the high E string
        (64, 1, 0),  # open high E
        (53, 4, 3),  # F3 on the D string
    ],
)
def test_fret_for(pitch, string, expected):
    assert fret_for(pitch, string, STANDARD_TUNING) == expected


def test_feasible_strings_examples():
    assert feasible_strings(40, STANDARD_TUNING) == {6}
    assert feasible_strings(30, STANDARD_TUNING) == set()
    # independent enumeration for pitch 64
    expected = {
        s
        for s in range(1, 7)
        if 0 <= 64 - STANDARD_TUNING.open_pitch(s) <= STANDARD_TUNING.max_fret
    }
    assert expected == {1, 2, 3, 4, 5}
    assert feasible_strings(64, STANDARD_TUNING) == expected


def test_fret_formula_round_trip_exhaustive():
    for string in range(1, NUM_STRINGS + 1):
        for fret in range(STANDARD_TUNING.max_fret + 1):
            pitch = STANDARD_TUNING.open_pitch(string) + fret
            assert fret_for(pitch, string, STANDARD_TUNING) == fret


@given(pitch=st.integers(0, 127), low=st.integers(0, 24), extra=st.integers(0, 12))
def test_feasible_strings_monotone_in_max_fret(pitch, low, extra):
    small = Tuning(STANDARD_TUNING.open_pitches, max_fret=low)
    large = Tuning(STANDARD_TUNING.open_pitches, max_fret=low + extra)
    assert feasible_strings(pitch, small) <= feasible_strings(pitch, large)


def test_canonical_sort_rules():
    assert canonical_sort([]) == []
    lo = Note(0, 10, 60, 80)
    hi = Note(0, 10, 64, 80)
    assert canonical_sort([lo, hi]) == [hi, lo]
    ordered = [hi, lo, Note(5, 10, 50, 40)]
    assert canonical_sort(ordered) == ordered


@given(
    st.lists(
        st.builds(
            Note,
            onset=st.integers(0, 100),
            duration=st.integers(1, 50),
            pitch=st.integers(0, 127),
            velocity=st.integers(1, 127),
        ),
        max_size=30,
    )
)
def test_canonical_sort_idempotent_permutation(notes):
    once = canonical_sort(notes)
    assert canonical_sort(once) == once
    assert sorted(map(repr, once)) == sorted(map(repr, notes))


def test_tuning_validation():
    with pytest.raises(ValueError):
        Tuning((64, 59, 55, 50, 45))
    with pytest.raises(ValueError):
        Tuning((64, 59, 55, 50, 45, 45))
    with pytest.raises(ValueError):
        Tuning((64, 59, 55, 50, 45, 200))


def test_note_validation():
    with pytest.raises(ValueError):
        Note(-1, 10, 60, 80)
    with pytest.raises(ValueError):
        Note(0, 0, 60, 80)
    with pytest.raises(ValueError):
        Note(0, 10, 60, 0)


def test_tabnote_assign_and_playability():
    note = Note(0, 10, 69, 90)
    tn = TabNote.assign(note, 1, STANDARD_TUNING)
    assert tn.fret == 5 and tn.playable(STANDARD_TUNING)
    low = TabNote.assign(Note(0, 10, 50, 90), 1, STANDARD_TUNING)
    assert low.fret == -14 and not low.playable(STANDARD_TUNING)


def test_tab_sequence_rejects_overlap_unless_unvalidated():
    a = TabNote.assign(Note(0, 100, 64, 80), 1, STANDARD_TUNING)
    b = TabNote.assign(Note(50, 100, 65, 80), 1, STANDARD_TUNING)
    with pytest.raises(ValueError):
        TabSequence(STANDARD_TUNING, (a, b))
    seq = TabSequence(STANDARD_TUNING, (a, b), unvalidated=True)
    assert len(string_collisions(seq.notes)) == 1
    # abutting notes do not overlap: [0, 100) then [100, ...)
    c = TabNote.assign(Note(100, 10, 65, 80), 1, STANDARD_TUNING)
    TabSequence(STANDARD_TUNING, (a, c))


def test_tab_sequence_fret_consistency_checked():
    note = Note(0, 10, 69, 90)
    with pytest.raises(ValueError):
        TabSequence(STANDARD_TUNING, (TabNote(note, 1, 7),))


def test_tab_sequence_sorts_canonically():
    rng = random.Random(3)
    notes = []
    for string in range(1, 7):
        fret = rng.randint(0, 21)
        notes.append(
            TabNote.assign(Note(0, 10, STANDARD_TUNING.open_pitch(string) + fret, 80), string, STANDARD_TUNING)
        )
    seq = TabSequence(STANDARD_TUNING, tuple(notes))
    pitches = [tn.note.pitch for tn in seq.notes]
    assert pitches == sorted(pitches, reverse=True)
