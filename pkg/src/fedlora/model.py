"""Small multi-layer classifier with frozen base weights and LoRA adapters.

The network is a stand-in for a transformer at desk scale: ``layers``
blocks, each containing ``modules_per_layer`` adapted linear modules
applied in sequence (affine + activation), followed by a frozen linear
head. Only the adapter factors train; base weights, biases and the head
are fixed at initialization.

Per adapted module the effective weight is ``w0 + (alpha / rank) * b @ a``
with ``b`` of shape (d, rank) and ``a`` of shape (rank, d). ``b`` starts
at zero so the initial model equals the frozen base model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConfigError
from .linalg import Rng, sample_gaussian

_ACT_KINDS = {"tanh": backend.ACT_TANH, "relu": backend.ACT_RELU,
              "linear": backend.ACT_LINEAR}


@dataclass
class LoraAdapter:
    """Low-rank factor pair for one module; contributes
    ``(alpha / rank) * b @ a`` on top of the frozen base weight."""

    b: np.ndarray  # (d1, rank)
    a: np.ndarray  # (rank, d2)
    rank: int
    alpha: float = 16.0

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta_w(self) -> np.ndarray:
        """Effective weight update contributed by this adapter."""
        return self.scaling * (self.b @ self.a)

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.b.copy(), self.a.copy(), self.rank, self.alpha)


@dataclass
class Batch:
    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,) int64 class indices


@dataclass
class ModuleGrads:
    b: np.ndarray
    a: np.ndarray


@dataclass
class ModelConfig:
    d: int = 32
    layers: int = 2
    modules_per_layer: int = 2
    num_classes: int = 8
    r_g: int = 8
    lora_alpha: float = 16.0
    activation: str = "tanh"

    def validate(self) -> None:
        for name in ("d", "layers", "modules_per_layer", "num_classes", "r_g"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        if self.r_g > self.d:
            raise ConfigError(f"model.r_g={self.r_g} exceeds width d={self.d}")
        if self.activation not in _ACT_KINDS:
            raise ConfigError(
                f"model.activation must be one of {sorted(_ACT_KINDS)}"
            )


@dataclass
class LoraModel:
    """Frozen base network plus the initial (zero-contribution) adapters.

    ``w0`` is stacked (n_modules, d, d); training code passes its own
    adapter copies to forward/loss, the ``adapters`` field only records
    the initialization.
    """

    w0: np.ndarray
    bias: np.ndarray
    head: np.ndarray
    cfg: ModelConfig
    adapters: list[LoraAdapter] = field(default_factory=list)

    @property
    def n_modules(self) -> int:
        return self.cfg.layers * self.cfg.modules_per_layer

    @property
    def act_kind(self) -> int:
        return _ACT_KINDS[self.cfg.activation]


def init_model(cfg: ModelConfig, rng: Rng) -> LoraModel:
    """Build the frozen base and zero-initialized adapters.

    Base weights and head ~ Gaussian(0, 1/sqrt(d)), biases zero;
    per adapter b = 0 and a ~ Gaussian(0, 1/sqrt(r_g)), the usual LoRA
    convention, so the initial effective update is exactly zero.
    """
    cfg.validate()
    n_modules = cfg.layers * cfg.modules_per_layer
    d = cfg.d
    w_std = 1.0 / np.sqrt(d)
    w0 = np.empty((n_modules, d, d))
    for mi in range(n_modules):
        w0[mi] = sample_gaussian(rng, d, d, w_std)
    bias = np.zeros((n_modules, d))
    head = sample_gaussian(rng, d, cfg.num_classes, w_std)
    adapters = []
    a_std = 1.0 / np.sqrt(cfg.r_g)
    for _ in range(n_modules):
        adapters.append(LoraAdapter(
            b=np.zeros((d, cfg.r_g)),
            a=sample_gaussian(rng, cfg.r_g, d, a_std),
            rank=cfg.r_g,
            alpha=cfg.lora_alpha,
        ))
    return LoraModel(w0=w0, bias=bias, head=head, cfg=cfg, adapters=adapters)


def stack_factors(adapters: list[LoraAdapter]) -> tuple[np.ndarray, np.ndarray]:
    """Copy per-module factors into contiguous (M, d, r) / (M, r, d) stacks."""
    b = np.ascontiguousarray(np.stack([ad.b for ad in adapters]))
    a = np.ascontiguousarray(np.stack([ad.a for ad in adapters]))
    return b, a


def unstack_factors(b: np.ndarray, a: np.ndarray, rank: int,
                    alpha: float) -> list[LoraAdapter]:
    return [LoraAdapter(b[mi].copy(), a[mi].copy(), rank, alpha)
            for mi in range(b.shape[0])]


def forward(model: LoraModel, adapters: list[LoraAdapter],
            inputs: np.ndarray) -> np.ndarray:
    """Logits for a batch of inputs (n, d) -> (n, num_classes)."""
    if inputs.ndim != 2 or inputs.shape[1] != model.cfg.d:
        raise ConfigError(
            f"inputs shape {inputs.shape} does not match model width "
            f"{model.cfg.d}"
        )
    if len(adapters) != model.n_modules:
        raise ConfigError(
            f"expected {model.n_modules} adapters, got {len(adapters)}"
        )
    h = inputs
    for mi, ad in enumerate(adapters):
        weff = model.w0[mi] + ad.scaling * (ad.b @ ad.a)
        z = h @ weff + model.bias[mi]
        h = _activate(z, model.act_kind)
    return h @ model.head


def _activate(z: np.ndarray, act_kind: int) -> np.ndarray:
    if act_kind == backend.ACT_TANH:
        return np.tanh(z)
    if act_kind == backend.ACT_RELU:
        return np.maximum(z, 0.0)
    return z


def loss_and_grads(model: LoraModel, adapters: list[LoraAdapter],
                   batch: Batch) -> tuple[float, list[ModuleGrads]]:
    """Mean cross-entropy over the batch and exact gradients for every
    adapter factor (frozen parameters get no gradients)."""
    if batch.x.shape[0] == 0:
        raise ConfigError("empty batch")
    b, a = stack_factors(adapters)
    gb = np.zeros_like(b)
    ga = np.zeros_like(a)
    loss = backend.ce_loss_and_grads(
        model.w0, model.bias, model.head, b, a, adapters[0].scaling,
        model.act_kind, np.ascontiguousarray(batch.x, dtype=np.float64),
        np.ascontiguousarray(batch.y, dtype=np.int64),
        gb, ga, True, True,
    )
    grads = [ModuleGrads(gb[mi].copy(), ga[mi].copy())
             for mi in range(len(adapters))]
    return loss, grads


def merge_for_eval(model: LoraModel, adapters: list[LoraAdapter]) -> LoraModel:
    """Fold ``(alpha / rank) * b @ a`` into the base weights; the returned
    model evaluates identically with zero adapters."""
    merged_w0 = model.w0.copy()
    for mi, ad in enumerate(adapters):
        merged_w0[mi] += ad.scaling * (ad.b @ ad.a)
    zero_adapters = [
        LoraAdapter(np.zeros_like(ad.b), ad.a.copy(), ad.rank, ad.alpha)
        for ad in adapters
    ]
    return LoraModel(w0=merged_w0, bias=model.bias, head=model.head,
                     cfg=model.cfg, adapters=zero_adapters)


def accuracy(model: LoraModel, adapters: list[LoraAdapter],
             x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; ties resolve to the lowest
    class index (numpy argmax convention)."""
    if x.shape[0] == 0:
        raise ConfigError("empty evaluation set")
    logits = forward(model, adapters, x)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == y))


def trainable_param_count(adapters: list[LoraAdapter]) -> int:
    """r * (d1 + d2) summed over modules."""
    return sum(ad.b.size + ad.a.size for ad in adapters)
