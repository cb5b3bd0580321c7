class ConfigError(ValueError):
    """Invalid configuration or grid/parameter combination."""


class RegimeError(ConfigError):
    """Scaling exponents outside 0 < a < 1, b, d >= 1."""


class ClosureError(ArithmeticError):
    """The mass-action closure is undefined (vanishing determinant)."""


class CFLError(RuntimeError):
    """Time step exceeds the stability bound."""


class FluxDirectionError(RuntimeError):
    """The activity drift points out of Y on a boundary face."""


class NonContractiveError(RuntimeError):
    """Picard iteration did not contract within the iteration budget."""
