"""Exception hierarchy shared across the engine."""


class BnmpeError(Exception):
    """Base class for every error raised by this package."""


class NetworkFormatError(BnmpeError):
    """The network document is malformed or fails validation."""


class QueryError(BnmpeError):
    """A query is ill-posed: unknown variable, bad state, conflicting
    targets/evidence, or a brute-force request above the size guard."""


class FactorInvariantError(BnmpeError):
    """An internal factor-algebra contract was violated (e.g. a variable
    reduced twice, or divergent tracebacks under a sum). Indicates a
    scheduling bug upstream, not a user error."""
