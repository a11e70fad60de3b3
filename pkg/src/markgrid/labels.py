"""Grid labels for 10x10 mark templates and their textual encoding.

A label is a 10x10 binary matrix: rows are digit values 0-9, columns are the
ten positions of a student ID (column 0 is the most significant position).
The textual record encodes one token per column: the digit itself when the
column holds a single mark, "X" when it holds none, and a bracket group such
as "[34]" listing all marked digits in ascending order when it holds several.
"""

from __future__ import annotations

import numpy as np

N_DIGITS = 10
N_COLUMNS = 10


class LabelFormatError(ValueError):
    """Raised when a textual record cannot be decoded into a grid label."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message if column is None else f"column {column}: {message}")
        self.column = column


class NotCfmtError(ValueError):
    """Raised when a student ID is requested from a label that is not
    correctly filled (some column does not hold exactly one mark)."""


class GridLabel:
    """Immutable 10x10 binary mark matrix.

    cells[d][c] == 1 means digit ``d`` is blackened in ID position ``c``.
    """

    __slots__ = ("cells",)

    def __init__(self, cells) -> None:
        arr = np.asarray(cells)
        if arr.shape != (N_DIGITS, N_COLUMNS):
            raise ValueError(f"label must be {N_DIGITS}x{N_COLUMNS}, got {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("label cells must be 0 or 1")
        arr = arr.astype(np.uint8).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "cells", arr)

    def __setattr__(self, name, value):
        raise AttributeError("GridLabel is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridLabel):
            return NotImplemented
        return bool(np.array_equal(self.cells, other.cells))

    def __hash__(self) -> int:
        return hash(self.cells.tobytes())

    def __repr__(self) -> str:
        return f"GridLabel({to_text(self)!r})"

    def marked_digits(self, column: int) -> list[int]:
        """Digits marked in one column, ascending."""
        return [int(d) for d in np.flatnonzero(self.cells[:, column])]

    @staticmethod
    def zeros() -> "GridLabel":
        return GridLabel(np.zeros((N_DIGITS, N_COLUMNS), dtype=np.uint8))

    @staticmethod
    def from_id(digits: str) -> "GridLabel":
        """Label with exactly the marks of a 10-digit ID string."""
        if len(digits) != N_COLUMNS or not digits.isdigit():
            raise ValueError(f"ID must be {N_COLUMNS} decimal digits, got {digits!r}")
        cells = np.zeros((N_DIGITS, N_COLUMNS), dtype=np.uint8)
        for c, ch in enumerate(digits):
            cells[int(ch), c] = 1
        return GridLabel(cells)


def is_cfmt(label: GridLabel) -> bool:
    """True iff every column holds exactly one mark (correctly filled)."""
    return bool((label.cells.sum(axis=0) == 1).all())


def to_text(label: GridLabel) -> str:
    """Encode a label as its textual record (lossless)."""
    tokens = []
    for c in range(N_COLUMNS):
        digits = label.marked_digits(c)
        if not digits:
            tokens.append("X")
        elif len(digits) == 1:
            tokens.append(str(digits[0]))
        else:
            tokens.append("[" + "".join(str(d) for d in digits) + "]")
    return "".join(tokens)


def from_text(record: str) -> GridLabel:
    """Decode a textual record back into a grid label.

    Raises LabelFormatError (with the offending column index) on malformed
    input: wrong token count, empty or single-digit bracket groups, or
    non-ascending digits inside a bracket group.
    """
    cells = np.zeros((N_DIGITS, N_COLUMNS), dtype=np.uint8)
    pos = 0
    column = 0
    while pos < len(record):
        if column >= N_COLUMNS:
            raise LabelFormatError(
                f"more than {N_COLUMNS} column tokens in {record!r}", column
            )
        ch = record[pos]
        if ch == "X":
            pos += 1
        elif ch.isdigit():
            cells[int(ch), column] = 1
            pos += 1
        elif ch == "[":
            end = record.find("]", pos + 1)
            if end < 0:
                raise LabelFormatError("unterminated bracket group", column)
            group = record[pos + 1 : end]
            if len(group) < 2:
                raise LabelFormatError(
                    f"bracket group must list at least two digits, got {group!r}",
                    column,
                )
            prev = -1
            for g in group:
                if not g.isdigit():
                    raise LabelFormatError(f"non-digit {g!r} in bracket group", column)
                d = int(g)
                if d <= prev:
                    raise LabelFormatError(
                        f"bracket digits must be strictly ascending, got {group!r}",
                        column,
                    )
                prev = d
                cells[d, column] = 1
            pos = end + 1
        else:
            raise LabelFormatError(f"unexpected character {ch!r}", column)
        column += 1
    if column != N_COLUMNS:
        raise LabelFormatError(
            f"expected {N_COLUMNS} column tokens, got {column}", column
        )
    return GridLabel(cells)


def to_student_id(label: GridLabel) -> str:
    """The 10-digit ID encoded by a correctly filled label.

    Position ``c`` of the result is the unique marked digit of column ``c``.
    Raises NotCfmtError when any column does not hold exactly one mark; such
    samples must be routed to manual review.
    """
    if not is_cfmt(label):
        raise NotCfmtError(f"label is not correctly filled: {to_text(label)}")
    return "".join(str(int(np.flatnonzero(label.cells[:, c])[0])) for c in range(N_COLUMNS))
