"""Exception hierarchy shared by every foldedot module."""


class FoldedError(Exception):
    """Base class for all errors raised by foldedot."""


class ValidationError(FoldedError, ValueError):
    """An input violates a documented precondition."""


class NotHermitian(ValidationError):
    pass


class NoConvergence(FoldedError, RuntimeError):
    pass


class ZeroTrace(ValidationError):
    pass


class BadShape(ValidationError):
    pass


class ShapeMismatch(BadShape):
    pass


class DimMismatch(BadShape):
    pass


class BadExponent(ValidationError):
    pass


class AntipodalAmbiguity(ValidationError):
    pass


class RankMismatch(ValidationError):
    pass


class BadChainLength(ValidationError):
    pass


class DimNotTwo(ValidationError):
    pass


class TailMass(ValidationError):
    """Truncated-basis state has too much weight on the last basis function."""

    def __init__(self, message, tail=None, index=None):
        super().__init__(message)
        self.tail = tail
        self.index = index


class InvalidDensity(ValidationError):
    """A matrix fails one of the density-matrix invariants.

    ``invariant`` names the violated condition, e.g. ``"Hermitian within 1e-10"``.
    """

    def __init__(self, invariant, detail=""):
        msg = f"invalid density matrix: {invariant}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.invariant = invariant


class Infeasible(FoldedError):
    """The fixed atom sets cannot represent the target marginals.

    ``certificate`` is the distance (Euclidean, in constraint space) from the
    right-hand side to the cone spanned by the constraint columns; a strictly
    positive value proves infeasibility.
    """

    def __init__(self, message, certificate=float("nan")):
        super().__init__(f"{message} (certificate norm {certificate:.3e})")
        self.certificate = certificate


class ParseError(ValidationError):
    def __init__(self, message, path=None, line=None, field=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.field = field


class UnknownSuite(ValidationError):
    pass
