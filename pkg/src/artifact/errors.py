"""Exception types shared across the library."""


class ConfigurationError(ValueError):
    """Invalid or inconsistent problem/solver configuration."""


class CertificateError(RuntimeError):
    """A solver returned without a verifiable optimality certificate."""


class EllipticityError(ValueError):
    """Diffusivity lost positive-definiteness somewhere in the domain."""


class InfeasibleError(RuntimeError):
    """Constraints admit no solution; carries the offending residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AssemblyError(RuntimeError):
    """An assembled operator violates a structural requirement."""
