"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class BsspError(Exception):
    code = "E_BSSP"


class ValidationError(BsspError, ValueError):
    code = "E_VALIDATION"


class CapacityError(BsspError, ValueError):
    code = "E_CAPACITY"


class DesignParseError(BsspError, ValueError):
    code = "E_PARSE"


class DegenerateColumnError(ValidationError):
    code = "E_DEGENERATE_COLUMN"

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column} has (near-)zero weighted mass in one group")


class OptimizationDivergedError(BsspError, RuntimeError):
    code = "E_DIVERGED"

    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite loss at iteration {iteration}")


class NoMatchError(BsspError):
    code = "E_NO_MATCH"


class GenerationError(BsspError, RuntimeError):
    code = "E_GENERATION"


class IngestionError(BsspError):
    code = "E_INGEST"
