"""Exception hierarchy shared by every module.

Each error carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class TileStitchError(Exception):
    exit_code = 1


class FormatError(TileStitchError):
    """Malformed RAS1/PGM/WTS1/plan file."""

    exit_code = 3


class SpecError(FormatError):
    """Invalid NETSPEC text. ``line`` is 1-based, or None for whole-file problems."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class WeightsError(FormatError):
    pass


class GeometryError(TileStitchError):
    exit_code = 4


class OutOfBounds(GeometryError):
    pass


class UnsupportedReflect(GeometryError):
    pass


class ShapeError(GeometryError):
    pass


class PlanError(TileStitchError):
    exit_code = 5


class CoverageError(TileStitchError):
    exit_code = 5
