"""Shared generators and oracles for randomized tests."""

from __future__ import annotations

import random

import torch

from fretwise.core import NUM_STRINGS, Note, STANDARD_TUNING, TabNote, TabSequence, Tuning
from fretwise.tokens import (
    DURATION,
    DURATION_GRID,
    PITCH,
    STRING,
    TIME_SHIFT,
    TIME_SHIFT_GRID,
    VELOCITY,
    Vocabulary,
    velocity_bin,
    velocity_from_bin,
)

VELOCITY_CENTERS = sorted({velocity_from_bin(b) for b in range(8)})


def random_tab_sequence(
    rng: random.Random,
    tuning: Tuning = STANDARD_TUNING,
    max_notes: int = 40,
) -> TabSequence:
    """A valid (collision-free) sequence with arbitrary tick values."""
    notes: list[TabNote] = []
    total = rng.randint(0, max_notes)
    cursor = {s: 0 for s in range(1, NUM_STRINGS + 1)}
    for _ in range(total):
        string = rng.randint(1, NUM_STRINGS)
        onset = cursor[string] + rng.randint(0, 300)
        duration = rng.randint(1, 400)
        fret = rng.randint(0, tuning.max_fret)
        note = Note(onset, duration, tuning.open_pitch(string) + fret, rng.randint(1, 127))
        notes.append(TabNote(note, string, fret))
        cursor[string] = onset + duration
    return TabSequence(tuning, tuple(notes))


def random_aligned_tab_sequence(
    rng: random.Random,
    tuning: Tuning = STANDARD_TUNING,
    max_groups: int = 15,
) -> TabSequence:
    """A valid sequence whose onset deltas, durations, and velocities all sit
    exactly on the tokenizer's bins, so tokenization is lossless."""
    notes: list[TabNote] = []
    busy_until = {s: 0 for s in range(1, NUM_STRINGS + 1)}
    onset = 0
    nonzero_shifts = [t for t in TIME_SHIFT_GRID if t > 0]
    for g in range(rng.randint(0, max_groups)):
        prev = onset
        if g > 0:
            onset = prev + rng.choice(nonzero_shifts)
        free = [s for s in range(1, NUM_STRINGS + 1) if busy_until[s] <= onset]
        if not free:
            # durations never exceed the largest shift, so this always frees up
            onset = prev + TIME_SHIFT_GRID[-1]
            free = [s for s in range(1, NUM_STRINGS + 1) if busy_until[s] <= onset]
        rng.shuffle(free)
        for string in free[: rng.randint(1, max(1, min(3, len(free))))]:
            duration = rng.choice(DURATION_GRID)
            fret = rng.randint(0, tuning.max_fret)
            pitch = tuning.open_pitch(string) + fret
            velocity = rng.choice(VELOCITY_CENTERS)
            assert velocity_from_bin(velocity_bin(velocity)) == velocity
            notes.append(TabNote(Note(onset, duration, pitch, velocity), string, fret))
            busy_until[string] = onset + duration
    return TabSequence(tuning, tuple(notes))
