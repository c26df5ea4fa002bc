"""Exception hierarchy.

Each top-level class maps to one CLI exit code so that a failure anywhere in
the pipeline surfaces as a structured message naming the module and cause.
"""


class GapDecompError(Exception):
    exit_code = 1
    module = "gapdecomp"

    def describe(self):
        return {"module": self.module, "error": type(self).__name__, "message": str(self)}


class ConfigError(GapDecompError):
    exit_code = 2
    module = "cli"


class DataError(GapDecompError):
    exit_code = 3
    module = "dataio"


class DesignError(DataError):
    """Design matrix cannot be built (constant/duplicate columns, unseen levels)."""


class EstimationError(GapDecompError):
    exit_code = 4
    module = "probit"


class QuasiSeparationError(EstimationError):
    pass


class CollinearDesignError(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class NotConvergedError(EstimationError):
    pass


class DegenerateInferenceError(GapDecompError, ValueError):
    """Both standard errors are zero while the means differ."""

    module = "dataio"


class DecompositionError(EstimationError):
    module = "decomp"
