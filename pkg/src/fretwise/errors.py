"""Exception types shared across the package.

Each family maps to one CLI exit code, so errors stay distinguishable at
the process boundary.
"""


class FretwiseError(Exception):
    """Base class for all package errors."""


class MidiFormatError(FretwiseError):
    """Malformed MIDI data (bad header, bad event, unsupported format)."""


class MidiTruncationError(MidiFormatError):
    """MIDI data ended mid-structure; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class TokenStructureError(FretwiseError):
    """Token stream violates the five-token-per-note family cycle."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (at token index {index})"
        super().__init__(message)
        self.index = index


class VocabularyMismatchError(FretwiseError):
    """Checkpoint or model built against a different vocabulary."""


class CheckpointError(FretwiseError):
    """Checkpoint bytes are corrupt, truncated, or version-incompatible."""


class ContractViolationError(FretwiseError):
    """An operation was called outside its stated preconditions."""


class InfeasiblePitchError(FretwiseError):
    """A pitch has no playable string in the active tuning."""


class LatticeError(FretwiseError):
    """An event has no feasible candidate assignment (or too many notes)."""
