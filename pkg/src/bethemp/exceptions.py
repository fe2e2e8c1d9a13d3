"""Exception hierarchy shared by all subpackages."""


class BetheMPError(Exception):
    """Base class for errors raised by this package."""


class FamilyMismatchError(BetheMPError, ValueError):
    """Two densities with different sufficient statistics were combined."""


class NotNormalizableError(BetheMPError, ValueError):
    """A moment or partition query hit a density outside the natural parameter space."""


class DegenerateProjectionError(BetheMPError, ValueError):
    """Source moments violate the positivity constraints of the target family.

    The offending moment vector is kept on ``moments`` so a scheduler can log it.
    """

    def __init__(self, message, moments=None):
        super().__init__(message)
        self.moments = moments


class GraphValidationError(BetheMPError, ValueError):
    """A factor graph failed validation at build time."""


class IntractableError(BetheMPError, NotImplementedError):
    """A marginalization or expectation has no closed form for this factor/message pair."""


class EdgeError(BetheMPError):
    """Wraps a per-edge failure raised during a message passing run."""

    def __init__(self, edge, cause):
        super().__init__(f"edge {edge}: {cause}")
        self.edge = edge
        self.cause = cause


class DegenerateCavityError(BetheMPError, ValueError):
    """A pseudo-observation or cavity carried a non-positive variance."""


class SpaceTooLargeError(BetheMPError, ValueError):
    """Exhaustive enumeration was requested over too many joint states."""
