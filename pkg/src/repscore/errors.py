"""Exception hierarchy.

Every error carries the process exit code the command-line front end
reports for it: 2 input/parse, 3 invariant violation, 4 evaluation
impossible, 5 numerical failure.
"""


class RepscoreError(Exception):
    exit_code = 1


class InputError(RepscoreError):
    exit_code = 2


class InvariantError(RepscoreError, ValueError):
    exit_code = 3


class EvaluationError(RepscoreError, ValueError):
    exit_code = 4


class NumericalError(RepscoreError, ArithmeticError):
    exit_code = 5


# storage
class ParseError(InputError, ValueError):
    pass


class EmptyMatrix(ParseError):
    pass


class IoError(InputError, OSError):
    pass


class NonFiniteValue(InvariantError):
    pass


class MissingCorrectness(InputError, ValueError):
    pass


class InvalidConfig(InputError, ValueError):
    pass


# metrics
class EmptyVector(InvariantError):
    pass


class SingleElement(InvariantError):
    pass


class InvalidEta(InvariantError):
    pass


class DegenerateRepresentation(InvariantError):
    pass


class ZeroNorm(InvariantError):
    pass


# curves
class OneClassOnly(EvaluationError):
    pass


class NoPositives(EvaluationError):
    pass


# losses and models
class ZeroNormEmbedding(InvariantError):
    pass


class TooFewSamples(InvariantError):
    pass


class ShapeMismatch(InvariantError):
    pass


class IndexOutOfRange(InvariantError, IndexError):
    pass


class EmptyProfile(InvariantError):
    pass


class NonFiniteGradient(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
