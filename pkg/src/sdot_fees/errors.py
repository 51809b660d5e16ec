"""Exception types shared across the package."""

from __future__ import annotations


class SdotFeesError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(SdotFeesError):
    """Invalid domain, density, sites, or dual vector."""


class ConditioningError(SdotFeesError):
    """A cell mass sits at or below the configured floor where a derivative is needed."""


class InfeasibleFeeError(SdotFeesError):
    """The fee's domain box does not meet the unit simplex."""


class BracketError(SdotFeesError):
    """A scalar root could not be bracketed within the expansion cap."""


class BoundaryClampError(SdotFeesError):
    """Conjugate weight clamped at a two-sided domain endpoint; the Hessian formula is invalid there."""


class ShuffleError(SdotFeesError):
    """The mass-inflation routine could not land in its target band (vanishing-density plateau or cap hit)."""


class NewtonError(SdotFeesError):
    """Damped Newton failed; carries the iterate and trace collected so far."""

    def __init__(self, message, psi=None, trace=None):
        super().__init__(message)
        self.psi = psi
        self.trace = trace


class ConfigError(SdotFeesError):
    """Malformed run configuration; names the offending field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
