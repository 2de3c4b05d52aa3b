"""Exception hierarchy.

Everything numerical derives from :class:`BohmError` so callers (notably the
CLI) can map failures to exit codes without catching unrelated bugs.
"""


class BohmError(Exception):
    """Base class for all simulator failures."""


class DimensionError(BohmError, ValueError):
    """Input arrays do not match the particle/component layout of the state."""


class NodeError(BohmError):
    """Density at or below the node floor: the velocity field is undefined."""


class MasslessError(BohmError):
    """A trajectory quantity was requested for a massless particle."""


class NoMasslessError(BohmError):
    """Trace-out requested on a state without massless particles."""


class MultiComponentError(BohmError):
    """Polar decomposition requested for a multi-component wave function."""


class IndeterminateError(BohmError):
    """A ratio whose denominator vanishes at the evaluation point."""


class StepLimitError(BohmError):
    """Integrator exceeded ``max_steps``."""


class NonPositiveOmegaError(BohmError):
    """Reparametrization factor was not strictly positive."""


class MajorantBreachError(BohmError):
    """Rejection sampler saw a density above its majorant."""


class OverlapError(BohmError):
    """Pointer packets of different branches overlap."""


class UnclassifiedError(BohmError):
    """Too many pointer events could not be assigned to a branch."""


class PreconditionError(BohmError):
    """Input outside the documented validity regime of a check."""


class ScenarioError(BohmError):
    """Scenario file failed validation; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
