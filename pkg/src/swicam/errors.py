"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit with 2,
bad or malformed data with 3, and pipeline infeasibility (spectral overlap,
no carrier, no unwrapping ladder) with 4.
"""


class SwiError(Exception):
    exit_code = 1
    category = "error"


class ConfigError(SwiError, ValueError):
    exit_code = 2
    category = "config"


class DataError(SwiError, ValueError):
    exit_code = 3
    category = "data"


class InfeasibleError(SwiError, RuntimeError):
    exit_code = 4
    category = "infeasible"


class DimensionError(DataError):
    """Two grids that must share geometry do not."""


class FormatError(DataError):
    """A grid file is malformed or truncated."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class RoleMismatchError(FormatError):
    """A grid file holds a different kind of data than requested."""


class DegenerateFitError(DataError):
    """Too few (or collinear) valid pixels to fit a plane."""


class AliasingError(ConfigError):
    """Two reference beams share a carrier, so their sidebands coincide."""


class CarrierNotFoundError(InfeasibleError):
    pass


class OverlapError(InfeasibleError):
    """The sideband filter would reach into another spectral region."""


class CascadeInfeasibleError(InfeasibleError):
    pass
