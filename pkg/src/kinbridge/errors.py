"""Exception types shared across the package."""


class KinbridgeError(Exception):
    """Base class for all package errors."""


class DomainError(KinbridgeError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidSpecError(KinbridgeError, ValueError):
    """A potential or schedule violates a structural hypothesis."""


class IntegrationError(KinbridgeError, RuntimeError):
    """A trajectory integration failed.

    ``closest_approach`` is the smallest pair separation (microscopic units)
    seen before the failure, when known. ``replica`` is filled in by the
    ensemble driver.
    """

    def __init__(self, message, closest_approach=None, replica=None):
        super().__init__(message)
        self.closest_approach = closest_approach
        self.replica = replica


class ConfinementError(IntegrationError):
    """A particle left the confining region G."""


class DegenerateCollisionError(KinbridgeError, ValueError):
    """Collision requested for two particles with equal momenta."""


class PackingError(KinbridgeError, RuntimeError):
    """Initial sampling with overlap exclusion is infeasible."""


class ConfigError(KinbridgeError, ValueError):
    """Experiment configuration failed validation.

    All violations are collected in ``problems`` so they can be reported
    together.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
