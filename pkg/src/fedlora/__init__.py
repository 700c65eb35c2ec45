"""fedlora: a deterministic simulator of federated LoRA fine-tuning.

Implements alternating-freeze training with adaptive rank selection
alongside the common federated LoRA baselines (independent factor
averaging, frozen-A averaging, SVD re-factorization, rank zero-padding),
with optional Laplace differential privacy and non-IID client
partitioning. Everything is seeded and bit-reproducible per backend.
"""

from .errors import ConfigError, NumericalError, ProtocolViolation

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NumericalError",
    "ProtocolViolation",
    "__version__",
]
