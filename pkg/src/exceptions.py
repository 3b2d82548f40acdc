class CmpcError(Exception):
    """Base class for every error raised by the lane-merge controller."""


class EmptySet(CmpcError):
    """A Pontryagin difference removed every point of an interval set."""


class FactorizationFailure(CmpcError):
    """The Gram matrix (plus jitter) is not positive definite."""


class CertificationFailure(CmpcError):
    """No terminal set candidate could be certified robust control invariant."""

    def __init__(self, message: str, report=None) -> None:
        super().__init__(message)
        self.report = report


class InfeasibleStart(CmpcError):
    """The very first controller solve of a scenario found no feasible plan."""

    def __init__(self, message: str, log=None) -> None:
        super().__init__(message)
        self.log = log


class AssumptionViolation(CmpcError):
    """The learned model left the disturbance set while the hard variant was running."""


class ConfigError(CmpcError):
    """The configuration file could not be read or failed schema validation."""
