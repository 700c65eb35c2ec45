"""Shared helpers for the test suite.

Expected values come from independent oracles computed right here in the
tests: hand-written triple-loop matrix products, central finite
differences, eigenvalues of Gram matrices, and step-by-step unrolled
optimizer recurrences. numpy's own linalg/random are used freely as
oracle machinery since the package does not use them for these jobs.
"""

from __future__ import annotations

import numpy as np
import pytest

from fedlora.linalg import Rng
from fedlora.model import ModelConfig, init_model


def triple_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference matrix product, one scalar multiply-add at a time."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for l in range(k):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def rel_err(got: float, want: float) -> float:
    return abs(got - want) / (abs(want) + 1e-12)


@pytest.fixture
def nprng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def small_model(d: int = 8, layers: int = 2, modules_per_layer: int = 1,
                num_classes: int = 3, r_g: int = 2, activation: str = "tanh",
                seed: int = 7):
    cfg = ModelConfig(d=d, layers=layers, modules_per_layer=modules_per_layer,
                      num_classes=num_classes, r_g=r_g, activation=activation)
    return init_model(cfg, Rng(seed))


def random_batch(model, n: int, rng: np.random.Generator):
    x = rng.normal(size=(n, model.cfg.d))
    y = rng.integers(0, model.cfg.num_classes, size=n).astype(np.int64)
    return x, y
