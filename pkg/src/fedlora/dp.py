"""Client-side differential privacy: L2 clipping plus Laplace noise.

The mechanism runs after local training and before aggregation, on the
uploaded factor values only. With an infinite epsilon the whole pipeline
is bit-exact identity, so DP-off and DP-with-infinite-budget runs
produce identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import Rng


@dataclass
class DpConfig:
    """epsilon: privacy budget (inf disables noise); clip: L2 bound on
    the whole per-client upload vector."""

    enabled: bool = False
    epsilon: float = math.inf
    clip: float = 2.0

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError(f"dp.epsilon must be > 0, got {self.epsilon}")
        if self.clip <= 0:
            raise ConfigError(f"dp.clip must be > 0, got {self.clip}")

    @property
    def is_identity(self) -> bool:
        return (not self.enabled) or math.isinf(self.epsilon)


def clip_update(arrays: list[np.ndarray], clip: float) -> list[np.ndarray]:
    """Scale the concatenated upload by min(1, clip / l2norm), jointly
    across all arrays so the single-vector sensitivity bound holds."""
    if clip <= 0:
        raise ConfigError(f"clip bound must be > 0, got {clip}")
    sq = sum(float(np.sum(a * a)) for a in arrays)
    norm = math.sqrt(sq)
    if norm <= clip:
        return [a.copy() for a in arrays]
    scale = clip / norm
    return [a * scale for a in arrays]


def noise_scale(cfg: DpConfig, n_local: int) -> float:
    """Laplace scale b = clip / (epsilon * n_local); zero when disabled."""
    if n_local < 1:
        raise ConfigError(f"n_local must be >= 1, got {n_local}")
    if cfg.is_identity:
        return 0.0
    return cfg.clip / (cfg.epsilon * n_local)


def add_noise(arrays: list[np.ndarray], cfg: DpConfig, n_local: int,
              rng: Rng) -> list[np.ndarray]:
    """Add i.i.d. Laplace(0, b) to every entry; identity when epsilon is
    infinite or DP is disabled (same objects returned, bit-exact)."""
    cfg.validate()
    if cfg.is_identity:
        return arrays
    b = noise_scale(cfg, n_local)
    out = []
    for a in arrays:
        noised = a.copy()
        flat = noised.ravel()
        for i in range(flat.size):
            flat[i] += rng.laplace(b)
        out.append(noised)
    return out


def privatize_update(arrays: list[np.ndarray], cfg: DpConfig, n_local: int,
                     rng: Rng) -> list[np.ndarray]:
    """Clip then noise; the full client-side mechanism."""
    cfg.validate()
    if cfg.is_identity:
        return arrays
    return add_noise(clip_update(arrays, cfg.clip), cfg, n_local, rng)
