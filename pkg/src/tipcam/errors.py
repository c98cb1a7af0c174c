"""Exception hierarchy shared across the package."""


class TipcamError(Exception):
    """Base class for all package-specific errors."""


class ObservationError(TipcamError):
    """A provider failed to produce an observation (distinct from an
    observation that simply contains zero masks)."""


class MaskFormatError(TipcamError):
    """Malformed observation container. Carries the byte offset at which
    parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class DegenerateMaskError(TipcamError):
    """Mask too thin to support robust bounding-line extraction."""


class CircleFitError(TipcamError):
    """Radius search exhausted its bracket without an interior minimum.

    ``best`` holds the best-effort fit found at the bracket edge.
    """

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class PairingError(TipcamError):
    """No qualifying vertical knob pair; the servo treats this as
    "cannot see target"."""


class MotionError(TipcamError):
    """Commanded tool pose outside the workspace."""


class WorldStateError(TipcamError):
    """World operation violates current state (pick while holding,
    place onto an occupied seat, ...)."""


class RenderError(TipcamError):
    """Camera pose cannot produce an image (e.g. tool at or below the
    brick top plane)."""
