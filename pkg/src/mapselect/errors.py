"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: usage errors exit 2, data/validation
errors exit 3, numerical errors exit 4.
"""


class MapSelectError(Exception):
    """Base class for all library errors."""


class UsageError(MapSelectError):
    """Bad arguments or configuration (CLI exit code 2)."""


class DataError(MapSelectError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class UnknownIdError(DataError):
    """A point or frame id that does not exist in the map."""


class ValidationError(DataError):
    """A map failed invariant validation."""


class BudgetError(UsageError):
    """Budget smaller than the forced-inclusion set, or otherwise infeasible."""


class ConfigurationError(UsageError):
    """A utility was requested on a map that cannot support it."""


class DegenerateProblemError(ConfigurationError):
    """A normalising constant evaluated to zero."""


class NumericalError(MapSelectError):
    """Numerical failure (CLI exit code 4)."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed (matrix not positive definite)."""


class RankDeficiencyError(NumericalError):
    """A point information block is singular even after damping."""


class NumericalBreakdownError(NumericalError):
    """A Cholesky downdate destroyed positive definiteness."""


class UnderConstrainedError(NumericalError):
    """Bundle adjustment normal equations are rank deficient."""

    def __init__(self, frame_indices):
        self.frame_indices = sorted(frame_indices)
        super().__init__(
            "under-constrained frames (too few observations): %s"
            % self.frame_indices
        )


class CombinatorialBlowupError(UsageError):
    """Exhaustive enumeration would exceed the instance-size cap."""


class GenerationError(DataError):
    """A synthetic world specification produced no usable observations."""


class DuplicateSelectionError(UsageError):
    """A point was committed twice to the same selection state."""


class EmptyProblemError(DataError):
    """Selection requested on a map with no frames."""
