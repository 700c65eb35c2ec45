"""Exception types shared across the simulator.

The CLI maps these to exit codes: ConfigError -> 1, NumericalError and
ProtocolViolation -> 2, anything else propagates.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad key, type, or violated constraint."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class ProtocolViolation(RuntimeError):
    """A federated-protocol contract was broken (e.g. a frozen factor changed,
    or an upload contains data outside the client's selected ranks)."""
