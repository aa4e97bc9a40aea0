"""Exception hierarchy shared by every module of the package."""


class MMAPQError(Exception):
    """Base class for all package errors."""


class ModelError(MMAPQError, ValueError):
    """A model configuration violates a structural constraint."""


class NonGenerator(ModelError):
    pass


class ImproperKernel(ModelError):
    pass


class BadDistribution(ModelError):
    pass


class ModelIndexError(ModelError, IndexError):
    pass


class GridError(ModelError):
    pass


class SchemaError(ModelError):
    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or field)


class ModelSyntaxError(ModelError):
    def __init__(self, message, line=None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ModelError):
    """Carries the complete list of violations found by ``validate_model``."""

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{type(e).__name__}: {e}" for e in self.errors]
        super().__init__("; ".join(lines))


class DomainError(MMAPQError, ValueError):
    pass


class Reducible(MMAPQError, ValueError):
    pass


class TruncationError(MMAPQError, ValueError):
    pass


class NotNormalized(MMAPQError, ValueError):
    pass


class NotDegenerate(MMAPQError, ValueError):
    pass


class NotExponential(MMAPQError, ValueError):
    pass


class NonProbability(MMAPQError, ValueError):
    pass


class ExplosionGuard(MMAPQError, RuntimeError):
    pass


class ConservationError(MMAPQError, RuntimeError):
    pass


class LabelMismatch(MMAPQError, KeyError):
    pass
