"""Exception types raised across the package."""


class BwlabError(Exception):
    """Base class for all package-specific errors."""


class NonErgodicChain(BwlabError):
    """Transition matrix has no unique stationary distribution."""


class ZeroTransition(BwlabError):
    """A transition probability is zero, so no mixing constant exists."""


class DomainError(BwlabError):
    """Argument outside the mathematical domain of an operation."""


class NumericalUnderflow(BwlabError):
    """A per-step normalizer collapsed to -inf in the log-domain recursion."""


class TooLarge(BwlabError):
    """Problem size exceeds the brute-force enumeration cap."""


class MissingExtension(BwlabError):
    """Sequence does not carry the observation extension a window needs."""


class EmptyState(BwlabError):
    """A state received (numerically) zero posterior mass; its mean update is undefined."""


class ConcavityViolation(BwlabError):
    """A curvature check disagreed with the closed form beyond tolerance."""


class BoundViolation(BwlabError):
    """An enumerated quantity exceeded its theoretical bound."""


class FitFailure(BwlabError):
    """Too few points to fit a rate; reported, not fatal in experiment drivers."""


class ParseError(BwlabError):
    """Malformed config file (carries line/key context in the message)."""


class ValidationError(BwlabError):
    """Config value outside its documented range."""


class IoError(BwlabError):
    """Output emission failed; no partial file is left behind."""
