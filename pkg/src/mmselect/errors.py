"""Exception hierarchy shared across the package.

Data problems (bad files, mismatched shapes, missing labels) and solver
failures are kept in separate branches so the CLI can map them to distinct
exit codes: data errors exit 2, solver errors exit 3.
"""

from __future__ import annotations


class MmselectError(Exception):
    """Base class for every error raised by this package."""


class DataError(MmselectError):
    """Invalid or inconsistent input data (CLI exit code 2)."""


class SolverError(MmselectError):
    """Optimal-transport solver failure (CLI exit code 3)."""


# --- embedding container / file format ---------------------------------------

class EmbeddingFormatError(DataError):
    """Malformed embedding file."""


class BadMagic(EmbeddingFormatError):
    pass


class TruncatedPayload(EmbeddingFormatError):
    pass


class TrailingBytes(EmbeddingFormatError):
    pass


class NonFiniteValue(EmbeddingFormatError):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"non-finite value at row {row}, column {col}")


class ManifestFormatError(DataError):
    """Malformed manifest line (bad JSON, wrong keys or value types)."""


class ShapeMismatch(DataError):
    pass


class ZeroNormRow(DataError):
    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"row {row} has zero L2 norm")


# --- vector geometry ----------------------------------------------------------

class EmptyValidationSet(DataError):
    pass


class ZeroNormInput(DataError):
    pass


class DimMismatch(DataError):
    pass


class DegenerateInput(DataError):
    pass


# --- optimal transport ----------------------------------------------------------

class EmptySet(DataError):
    pass


class SizeExceeded(SolverError):
    pass


class DegenerateMarginal(DataError):
    pass


class CycleLimit(SolverError):
    """Simplex iteration cap hit; indicates a solver bug, not bad data."""


class NonConvergence(SolverError):
    """Sinkhorn did not reach the marginal tolerance within max_iter.

    Carries the best iterate so callers can decide whether to use it.
    """

    def __init__(self, solution, violation: float):
        self.solution = solution
        self.violation = violation
        super().__init__(
            f"sinkhorn stopped at marginal violation {violation:.3e} above tolerance"
        )


class TooFewSources(DataError):
    pass


class SimplexViolation(DataError):
    """Marginal perturbation left the probability simplex."""


# --- selection ----------------------------------------------------------------

class ZeroNormCentroid(DataError):
    pass


class MissingLabels(DataError):
    pass


# --- benchmark ------------------------------------------------------------------

class EmptyTrainingSet(DataError):
    pass


class LengthMismatch(DataError):
    pass
