"""AdamW with independent learning rates for the two adapter factors.

The B factor trains ``b_multiplier`` times faster than A (LoRA+-style
asymmetry); optimizer state is owned per parameter matrix and reset at
the start of every round's local training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError


@dataclass
class AdamWState:
    """Moments for one parameter matrix; ``t`` counts completed steps."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: np.ndarray, weight_decay: float = 0.0,
                  **kw) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param),
                   weight_decay=weight_decay, **kw)


def adamw_step(state: AdamWState, param: np.ndarray, grad: np.ndarray,
               lr: float, frozen: bool = False,
               mask: np.ndarray | None = None) -> np.ndarray:
    """One in-place AdamW step (decoupled weight decay, bias correction).

    ``frozen`` short-circuits: parameters and moments stay untouched.
    ``mask`` (bool, broadcastable to param's shape) restricts which
    entries move; moments still accumulate everywhere so masking the
    applied step leaves excluded entries bit-identical.
    """
    if lr < 0:
        raise ConfigError(f"lr must be >= 0, got {lr}")
    if frozen:
        return param
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ConfigError(
            f"adamw shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    if not param.flags.c_contiguous:
        raise ConfigError("adamw requires a C-contiguous parameter array")
    state.t += 1
    flat_mask = None
    if mask is not None:
        flat_mask = np.ascontiguousarray(
            np.broadcast_to(mask, param.shape), dtype=np.uint8
        ).ravel()
    backend.adamw_update(
        param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
        state.m.reshape(-1), state.v.reshape(-1), state.t, lr,
        state.beta1, state.beta2, state.eps, state.weight_decay, flat_mask,
    )
    return param


@dataclass
class LrPolicy:
    """Base rate for A; B trains at ``b_multiplier`` times that rate."""

    eta_a: float = 0.0005
    b_multiplier: float = 5.0

    @property
    def eta_b(self) -> float:
        return self.eta_a * self.b_multiplier


def lr_for_factor(policy: LrPolicy, factor: str) -> float:
    if factor == "a":
        return policy.eta_a
    if factor == "b":
        return policy.eta_b
    raise ConfigError(f"factor must be 'a' or 'b', got {factor!r}")
