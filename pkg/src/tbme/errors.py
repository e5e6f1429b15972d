"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation problems exit 1,
numerical degeneracies exit 2, filesystem trouble exits 3.
"""


class TbmeError(Exception):
    """Base class for package-specific failures."""


class ValidationError(TbmeError, ValueError):
    """Malformed or contract-violating input data.

    Messages carry the offending file / row / column where that is known,
    so a failure can be located without re-running under a debugger.
    """


class DegenerateWindowError(TbmeError, ArithmeticError):
    """Every realization has zero likelihood inside some window.

    This almost always means the measurement sigma is far too tight for
    the ensemble spread, so we abort loudly instead of returning -inf.
    """
