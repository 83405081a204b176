"""Exception hierarchy and process exit codes.

Exit codes used by the command line tool:

* 0 -- success
* 2 -- invalid input or configuration
* 3 -- numerical failure (non-convergence, infeasible model, determinism check)
* 4 -- I/O failure (unreadable input, unwritable output directory)
"""

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class IcaSensError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_VALIDATION


class ValidationError(IcaSensError):
    """Raised when inputs or configuration violate a documented contract."""

    exit_code = EXIT_VALIDATION


class NumericError(IcaSensError):
    """Raised when an algorithm fails to converge or a model is infeasible."""

    exit_code = EXIT_NUMERIC


class OutputError(IcaSensError):
    """Raised when reading inputs or writing results fails."""

    exit_code = EXIT_IO
