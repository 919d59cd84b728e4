"""Exception hierarchy.

Two families: :class:`InputError` for malformed requests (bad dimensions,
invalid configs) and :class:`NumericalError` for failures of a numerical
method on admissible input. The CLI maps them to exit codes 1 and 2.
"""


class BilinredError(Exception):
    pass


class InputError(BilinredError, ValueError):
    pass


class NumericalError(BilinredError, ArithmeticError):
    pass


# linear algebra kernel
class NonHurwitz(NumericalError):
    pass


class SingularSylvesterOperator(NumericalError):
    pass


class SpectraOverlap(NumericalError):
    pass


class SingularOperator(NumericalError):
    pass


class TooLarge(InputError):
    pass


class Indefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# bilinear systems
class NotPurelyBilinear(InputError):
    pass


class NoNullVector(NumericalError):
    pass


class NonSimpleNull(NumericalError):
    pass


class RowSumViolation(InputError):
    def __init__(self, message, max_violation=float("nan")):
        super().__init__(message)
        self.max_violation = max_violation


class NotStabilizing(NumericalError):
    pass


# reduction
class RankDeficientGramian(NumericalError):
    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank


class BadDimension(InputError):
    pass


class SingularFastBlock(NumericalError):
    pass


class IllConditionedProjector(NumericalError):
    pass


class UnstableIterate(NumericalError):
    pass


# models / simulation
class ConfigInvalid(InputError):
    pass


class StepSizeUnderflow(NumericalError):
    pass


class GridMismatch(InputError):
    pass
