"""
Error hierarchy and exit-code mapping.

Every failure the pipeline can raise derives from PodThermError and carries the
exit code the command line reports for it.
"""

import logging

from pydantic import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class PodThermError(Exception):
    """Base class for all expected failures"""

    exit_code = EXIT_UNEXPECTED


class InputError(PodThermError):
    """Bad user input: config values, floorplans, traces"""

    exit_code = EXIT_CONFIG


class ConfigError(InputError):
    pass


class GeometryError(InputError):
    pass


class PowerTraceError(InputError):
    pass


class StorageError(PodThermError):
    """Missing, truncated or foreign artifact files"""

    exit_code = EXIT_IO


class NumericalError(PodThermError):
    """Solver, decomposition or projection failures"""

    exit_code = EXIT_NUMERICAL


class SolverError(NumericalError):
    def __init__(self, message: str, residual: float = float('nan')):
        super().__init__(message)
        self.residual = residual


class PodError(NumericalError):
    pass


class RomError(NumericalError):
    pass


class ZeroReferenceError(NumericalError):
    """Reference fields are identically ambient, so relative errors are undefined"""
    pass


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the command-line exit code"""

    if isinstance(error, PodThermError):
        return error.exit_code

    # pydantic rejects value objects built from config values
    if isinstance(error, ValidationError):
        return EXIT_CONFIG

    if isinstance(error, OSError):
        return EXIT_IO

    logger.error(f"Unexpected error: {error!r}")
    return EXIT_UNEXPECTED
