"""Exception types shared across the package."""


class NdiskError(Exception):
    """Base class for all package errors."""


class InvalidStateError(NdiskError):
    """A phase-space state violates its invariants (e.g. inside an obstacle)."""


class NearGrazingError(NdiskError):
    """Collision too close to tangency; the linearization blows up."""


class ParabolicOrbitError(NdiskError):
    """|trace| <= 2: the orbit is not hyperbolic and eigendata is undefined."""


class NewtonDivergedError(NdiskError):
    """Orbit search did not converge within the iteration budget."""


class OccludedLegError(NdiskError):
    """A free-flight segment of a candidate orbit passes through an obstacle."""


class GrazingOrbitError(NdiskError):
    """A candidate orbit contains a (near-)tangential bounce."""


class EmptyDbError(NdiskError):
    """An orbit database with no entries was passed to a spectral routine."""


class NearbyResonanceError(NdiskError):
    """Another resonance sits too close to the requested contour."""


class NonConvergentError(NdiskError):
    """An adaptive quadrature failed to stabilize within its node budget."""


class ParseError(NdiskError):
    """Weight-expression syntax error, with the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalDomainError(NdiskError):
    """Weight evaluation left the real domain (sqrt of negative, 1/0, ...)."""
