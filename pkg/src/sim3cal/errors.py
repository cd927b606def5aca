"""Exception and warning types shared across the package."""


class Sim3CalError(Exception):
    """Base class for all package errors."""


class DegeneratePoint(Sim3CalError, ValueError):
    """A point has no well-defined spherical coordinates (zero range)."""


class NormalizationError(Sim3CalError, ValueError):
    """A vector that must be unit length is not."""


class DegenerateIntersection(Sim3CalError, ValueError):
    """Three planes do not meet in a single well-conditioned point."""


class PlacementError(Sim3CalError, ValueError):
    """A generated target layout violates a placement requirement."""


class EmptyScene(Sim3CalError, ValueError):
    """A scan was requested on a scene without targets."""


class EmptyInput(Sim3CalError, ValueError):
    """An operation received no points."""


class FitFailed(Sim3CalError, RuntimeError):
    """A robust fit did not reach an acceptable solution."""


class RankDeficient(Sim3CalError, ValueError):
    """A point set does not span the dimension a fit needs."""


class TranslationUnobservable(Sim3CalError, ValueError):
    """The translation block of a quadratic form is singular."""


class ScaleUnidentifiable(Sim3CalError, ValueError):
    """The profiled cost is flat in scale, so scale cannot be recovered."""


class NotCertified(Sim3CalError, RuntimeError):
    """The SDP relaxation is not tight enough to certify a unique rotation.

    Attributes:
        certificate: the dual certificate that was computed, if any.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConfigError(Sim3CalError, ValueError):
    """An input file or argument is malformed."""


class ConvergenceWarning(UserWarning):
    """An iterative procedure stopped making progress."""
