"""Exception and warning classes raised by epiflow."""


class EpiflowError(Exception):
    """Base class for all epiflow errors.

    ``code`` is the short machine-readable tag printed by the CLI.
    """

    code = "EPIFLOW_ERROR"


class TooFewPoints(EpiflowError, ValueError):
    code = "TOO_FEW_POINTS"


class DegenerateConfiguration(EpiflowError, ValueError):
    code = "DEGENERATE_CONFIGURATION"

    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class SvdFailure(EpiflowError, ArithmeticError):
    code = "SVD_FAILURE"


class NoValidPixels(EpiflowError, ValueError):
    code = "NO_VALID_PIXELS"


class EmptyMask(EpiflowError, ValueError):
    code = "EMPTY_MASK"


class BadMagic(EpiflowError, ValueError):
    code = "BAD_MAGIC"


class TruncatedFile(EpiflowError, ValueError):
    code = "TRUNCATED_FILE"


class BadFormat(EpiflowError, ValueError):
    code = "BAD_FORMAT"


class ConfigError(EpiflowError, ValueError):
    code = "BAD_CONFIG"


class SingularPointWarning(RuntimeWarning):
    """Some correspondences sit at both epipoles and were skipped."""


class NonConvergenceWarning(RuntimeWarning):
    """The finest-level loss stopped improving before the run ended."""


class DisconnectedGraphWarning(RuntimeWarning):
    """The affinity graph has more connected components than clusters."""
