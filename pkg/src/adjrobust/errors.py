"""Exception types raised across the package."""


class AdjRobustError(Exception):
    """Base class for every error raised by adjrobust."""


class InputError(AdjRobustError, ValueError):
    """Bad user input: files, configs, tables."""


class MissingColumn(InputError):
    pass


class NonBinaryTreatment(InputError):
    pass


class NonNumericCell(InputError):
    def __init__(self, row, column, value):
        super().__init__(f"non-numeric cell at row {row}, column {column!r}: {value!r}")
        self.row = row
        self.column = column


class EmptyFile(InputError):
    pass


class InvalidTable(InputError):
    pass


class UnknownColumn(InputError):
    pass


class EmptyIntersection(InputError):
    """The adjustment sets share no covariate."""


class FewerThanTwoSets(InputError):
    pass


class DuplicateColumn(InputError):
    pass


class EmptyList(InputError):
    pass


class DimensionMismatch(AdjRobustError, ValueError):
    pass


class EmptyTrainingSet(AdjRobustError, ValueError):
    pass


class FoldTooSmall(AdjRobustError):
    """A cross-fitting fold leaves a training split without treated or control units."""


class RankDeficient(AdjRobustError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class PropensityOutOfRange(AdjRobustError, ValueError):
    pass


class SingularHessian(AdjRobustError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SingularGram(AdjRobustError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class Infeasible(AdjRobustError):
    """No finite tilt minimizer: the adjustment sets cannot be reconciled."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class TooManyDegenerateResamples(AdjRobustError):
    pass
