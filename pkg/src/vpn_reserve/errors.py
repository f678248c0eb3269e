"""Exception types shared across the package."""


class VpnReserveError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(VpnReserveError):
    """Invalid scenario or constructor input."""


class SaturationError(VpnReserveError):
    """Reserved bandwidth does not exceed the traffic (infinite M/M/1 delay)."""


class SimplexError(VpnReserveError):
    """LP solve failed (infeasible, unbounded or iteration guard hit)."""


class InstanceTooLargeError(VpnReserveError):
    """Enumeration or product-space guard exceeded."""


class DecompositionError(VpnReserveError):
    """Cross-Entropy decomposition did not reach the acceptance tolerance."""


class GameIterationError(VpnReserveError):
    """Switching-game loop hit the iteration cap; carries the last two value vectors."""

    def __init__(self, message, previous_values=None, last_values=None):
        super().__init__(message)
        self.previous_values = previous_values
        self.last_values = last_values
