"""Exception types shared across the package."""


class CavSqueezeError(Exception):
    """Base class for all package-specific errors."""


class LayoutError(CavSqueezeError):
    """Hilbert-space layout mismatch or invalid subsystem request."""


class TruncationError(CavSqueezeError):
    """Fock-space cutoff too small for the requested operation."""


class PropagationError(CavSqueezeError):
    """Time propagation failed to meet its accuracy contract."""


class SolverError(CavSqueezeError):
    """Root finding or fixed-point iteration failed."""


class ConditionGateError(CavSqueezeError):
    """Balance condition residual above the configured gate."""


class CriticalPointError(CavSqueezeError):
    """Requested quantity diverges at the perfect-squeezing point."""


class ConfigError(CavSqueezeError):
    """Configuration file failed schema validation."""
