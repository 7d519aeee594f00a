"""Exception hierarchy shared across the package.

Every error the library raises deliberately derives from SusyflowError so
callers (and the CLI) can distinguish validation problems from solver
failures.
"""


class SusyflowError(Exception):
    """Base class for all deliberate errors raised by susyflow."""


class ValidationError(SusyflowError):
    """Bad input: wrong shapes, unsupported parameters, malformed config."""


class SolverError(SusyflowError):
    """A numerical procedure failed to meet its contract."""


# mesh
class DimensionUnsupported(ValidationError):
    pass


class GridTooCoarse(ValidationError):
    pass


class BadStencilOrder(ValidationError):
    pass


class AxisOutOfRange(ValidationError):
    pass


# vfparse
class ExprSyntaxError(ValidationError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifier(ValidationError):
    def __init__(self, name, position=None):
        where = f" (at position {position})" if position is not None else ""
        super().__init__(f"unknown identifier {name!r}{where}")
        self.name = name


class DivisionByZero(SolverError):
    pass


class DomainMismatch(ValidationError):
    pass


class UnknownFlow(ValidationError):
    pass


# exterior
class DegreeOverflow(ValidationError):
    pass


class MeshMismatch(ValidationError):
    pass


class NotTopDegree(ValidationError):
    pass


class WidthTooNarrow(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


# fpoperator
class NegativeTime(ValidationError):
    pass


class NonConvergence(SolverError):
    pass


# gtomap
class NotUnimodular(ValidationError):
    pass


class TruncationTooSmall(ValidationError):
    pass


# spectral
class NoConvergence(SolverError):
    pass


class BranchAmbiguity(ValidationError):
    pass


class PartnerNotFound(SolverError):
    """Recorded per spectrum entry; raised only when asked to be strict."""


# topoanalysis
class IncompleteSpectrum(ValidationError):
    pass


class NormalizationFailure(SolverError):
    pass


# dynamics
class StepTooLarge(ValidationError):
    pass


class DegenerateIterate(ValidationError):
    pass


# cli
class ConfigError(ValidationError):
    def __init__(self, message, key=None, line=None):
        loc = ""
        if key is not None:
            loc += f" [key: {key}]"
        if line is not None:
            loc += f" [line: {line}]"
        super().__init__(message + loc)
        self.key = key
        self.line = line
