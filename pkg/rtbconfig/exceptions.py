# Copyright 2021, Milan Meulemans.
#
# This file is part of rtbconfig.
#
# rtbconfig is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# rtbconfig is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with rtbconfig.  If not, see <https://www.gnu.org/licenses/>.

"""rtbconfig exceptions."""
from __future__ import annotations

from collections.abc import Sequence
from typing import NamedTuple

__all__ = [
    "CheckpointError",
    "DataError",
    "InvalidArgument",
    "RowError",
    "RtbConfigException",
    "SchemaError",
    "SpecificationError",
    "Unavailable",
]


class RowError(NamedTuple):
    """One rejected input row."""

    line: int
    column: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, column {self.column!r}: {self.message}"


class RtbConfigException(Exception):
    """General rtbconfig exception."""


class SchemaError(RtbConfigException, ValueError):
    """Input file does not carry a required column."""

    def __init__(self, column: str, message: str | None = None) -> None:
        """Init with the offending column name."""
        super().__init__(message or f"missing required column: {column}")
        self.column = column


class DataError(RtbConfigException):
    """Input rows could not be parsed."""

    def __init__(self, message: str, errors: Sequence[RowError] = ()) -> None:
        """Init with the collected row errors."""
        super().__init__(message)
        self.errors = list(errors)


class InvalidArgument(RtbConfigException, ValueError):
    """Argument out of its valid range."""


class SpecificationError(RtbConfigException, ValueError):
    """Invalid or ambiguous synthetic plan or experiment settings."""


class CheckpointError(RtbConfigException):
    """Model checkpoint is corrupt or inconsistent."""


class Unavailable(RtbConfigException):
    """Remote log is unavailable."""
