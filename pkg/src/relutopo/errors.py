"""Exception types shared across the package.

Every error derives from :class:`RelutopoError`; most also derive from the
closest builtin (``ValueError``, ``ArithmeticError``) so callers that do not
care about the package hierarchy can still catch them idiomatically.
"""


class RelutopoError(Exception):
    """Base class for all package errors."""


# data ingestion / serialization
class BadMagic(RelutopoError, ValueError):
    pass


class Truncated(RelutopoError, ValueError):
    pass


class BadShape(RelutopoError, ValueError):
    pass


class BadLabel(RelutopoError, ValueError):
    pass


class ParseError(RelutopoError, ValueError):
    pass


class DimensionMismatch(RelutopoError, ValueError):
    pass


# network evaluation / training
class NonFiniteInput(RelutopoError, ValueError):
    pass


class BadClassIndex(RelutopoError, IndexError):
    pass


class EmptyDataset(RelutopoError, ValueError):
    pass


# flows
class NonFiniteState(RelutopoError, ArithmeticError):
    """An orbit state became non-finite; the step size is too large."""


class TooShort(RelutopoError, ValueError):
    pass


class EmptyInput(RelutopoError, ValueError):
    pass


class ComplexEigenvalues(RelutopoError, ValueError):
    pass


class DegenerateEigenvalues(RelutopoError, ValueError):
    pass


class NetworkMismatch(RelutopoError, ValueError):
    pass


# topology
class MissingFace(RelutopoError, ValueError):
    pass


class DuplicateSimplex(RelutopoError, ValueError):
    pass


class BadVertexId(RelutopoError, ValueError):
    pass


class DegenerateSimplex(RelutopoError, ValueError):
    pass


class BadDimension(RelutopoError, ValueError):
    pass


class Overflow(RelutopoError, OverflowError):
    """An integer intermediate left the signed 64-bit range."""


# planar geometry / index theory
class TooManyNeurons(RelutopoError, ValueError):
    pass


class DegenerateBox(RelutopoError, ValueError):
    pass


class FlatCell(RelutopoError, ValueError):
    """The decision function vanishes identically on a whole cell."""


class ZeroOnCurve(RelutopoError, ArithmeticError):
    """The field vanishes (or is undefined) at a sample on the curve."""


class RefinementExhausted(RelutopoError, ArithmeticError):
    """Angle increments stayed too large after the allowed refinements."""


class BadMargin(RelutopoError, ValueError):
    pass


class CurveNesting(RelutopoError, ValueError):
    pass
