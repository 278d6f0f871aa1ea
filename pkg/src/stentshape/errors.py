"""Exception hierarchy.

Each class carries the process exit code the command-line front end uses
when the error escapes a subcommand.
"""


class StentShapeError(Exception):
    exit_code = 1


class SpecError(StentShapeError, ValueError):
    """Invalid graft specification, configuration or opening geometry."""

    exit_code = 3


class CorrespondenceError(StentShapeError, ValueError):
    """Missing, extra or mislabelled markers."""

    exit_code = 4


class OutOfFrameError(StentShapeError, ValueError):
    """A marker projects outside the detector or lies behind the camera."""

    exit_code = 5


class DegenerateGeometryError(StentShapeError, ValueError):
    """Coplanar/collinear marker sets, rank-deficient systems, empty inputs."""

    exit_code = 6


class PoseSolveError(StentShapeError, RuntimeError):
    """Every pose candidate was rejected."""

    exit_code = 7
