"""Synthetic classification data, non-IID partitioning, and per-client
rank budgets.

The dataset is a Gaussian-cluster classification task: one random
unit-norm mean per class, isotropic noise around it. Two partitioners
produce client shards: a symmetric-Dirichlet split (smaller alpha =
more skew) and the pathological split where consecutive client pairs
exclusively own two classes split in half.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .linalg import Rng, sample_gaussian


@dataclass
class Dataset:
    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64
    num_classes: int

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass
class Shard:
    """One client's sample indices into the parent dataset plus its
    aggregation weight (shard size / total assigned samples)."""

    client_id: int
    indices: np.ndarray  # int64 indices
    weight: float

    @property
    def n(self) -> int:
        return self.indices.size


def gen_synthetic(num_classes: int, d: int, n_per_class: int,
                  cluster_std: float, rng: Rng) -> Dataset:
    """Balanced Gaussian clusters with random unit-norm class means."""
    if min(num_classes, d, n_per_class) < 1:
        raise ConfigError("num_classes, d, n_per_class must all be >= 1")
    if cluster_std < 0:
        raise ConfigError(f"cluster_std must be >= 0, got {cluster_std}")
    means = np.empty((num_classes, d))
    for c in range(num_classes):
        v = sample_gaussian(rng, 1, d, 1.0)[0]
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        means[c] = v / norm
    n = num_classes * n_per_class
    x = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    row = 0
    for c in range(num_classes):
        noise = sample_gaussian(rng, n_per_class, d, cluster_std)
        x[row:row + n_per_class] = means[c] + noise
        y[row:row + n_per_class] = c
        row += n_per_class
    return Dataset(x=x, y=y, num_classes=num_classes)


def _make_shards(assigned: list[list[int]]) -> list[Shard]:
    total = sum(len(ix) for ix in assigned)
    shards = []
    for cid, ix in enumerate(assigned):
        shards.append(Shard(
            client_id=cid,
            indices=np.array(sorted(ix), dtype=np.int64),
            weight=len(ix) / total,
        ))
    return shards


def dirichlet_partition(dataset: Dataset, k: int, alpha: float,
                        rng: Rng) -> list[Shard]:
    """Per class, draw client proportions ~ Dirichlet(alpha) and assign
    that class's samples accordingly.

    Extreme draws can leave clients empty; those are repaired by moving
    one sample from the currently largest shard to each empty one (ties
    on size break toward the lower client id), keeping full participation
    well-defined.
    """
    if k < 1:
        raise ConfigError(f"need k >= 1 clients, got {k}")
    if alpha <= 0:
        raise ConfigError(f"dirichlet alpha must be > 0, got {alpha}")
    if dataset.n < k:
        raise ConfigError(
            f"cannot split {dataset.n} samples among {k} clients"
        )
    assigned: list[list[int]] = [[] for _ in range(k)]
    for c in range(dataset.num_classes):
        class_idx = np.nonzero(dataset.y == c)[0]
        if class_idx.size == 0:
            continue
        p = rng.dirichlet(alpha, k)
        cum = np.cumsum(p)
        cum[-1] = 1.0  # guard against rounding at the top end
        for i in class_idx:
            u = rng.uniform()
            cid = int(np.searchsorted(cum, u, side="right"))
            assigned[min(cid, k - 1)].append(int(i))
    _repair_empty(assigned)
    return _make_shards(assigned)


def _repair_empty(assigned: list[list[int]]) -> None:
    for cid, ix in enumerate(assigned):
        if ix:
            continue
        sizes = [len(other) for other in assigned]
        donor = int(np.argmax(sizes))
        if sizes[donor] < 2:
            raise ConfigError("not enough samples to give every client one")
        assigned[cid].append(assigned[donor].pop())


def pathological_partition(dataset: Dataset, k: int) -> list[Shard]:
    """Consecutive client pairs (2j, 2j+1) exclusively own classes
    (2j, 2j+1), each class split in half between the pair. Classes beyond
    index k-1 are left out of every shard."""
    if k % 2 != 0 or k < 2:
        raise ConfigError(f"pathological partition needs even k >= 2, got {k}")
    if dataset.num_classes < k:
        raise ConfigError(
            f"pathological partition needs num_classes >= k "
            f"({dataset.num_classes} < {k})"
        )
    assigned: list[list[int]] = [[] for _ in range(k)]
    for j in range(k // 2):
        c1, c2 = 2 * j, 2 * j + 1
        for c in (c1, c2):
            class_idx = np.nonzero(dataset.y == c)[0]
            if class_idx.size < 2:
                raise ConfigError(
                    f"class {c} has {class_idx.size} samples, need >= 2"
                )
            half = class_idx.size // 2
            assigned[2 * j].extend(int(i) for i in class_idx[:half])
            assigned[2 * j + 1].extend(int(i) for i in class_idx[half:])
    return _make_shards(assigned)


_BUDGET_KINDS = ("homogeneous", "uniform", "heavy_tail", "normal")


@dataclass
class RankBudgetAssignment:
    kind: str
    r_i: np.ndarray  # (k,) int64, each in [1, r_g]


def assign_rank_budgets(k: int, kind: str, r_g: int, rng: Rng,
                        r_homogeneous: int = 1) -> RankBudgetAssignment:
    """Per-client communication rank budgets.

    homogeneous: everyone gets ``r_homogeneous``. uniform: uniform on
    {1..r_g}. heavy_tail: geometric with p=1/2 capped at r_g (median 1).
    normal: rounded Gaussian centered at r_g/2, sd r_g/4, clamped.
    """
    if r_g < 1:
        raise ConfigError(f"r_g must be >= 1, got {r_g}")
    if kind not in _BUDGET_KINDS:
        raise ConfigError(
            f"budget kind must be one of {_BUDGET_KINDS}, got {kind!r}"
        )
    r_i = np.empty(k, dtype=np.int64)
    if kind == "homogeneous":
        if not 1 <= r_homogeneous <= r_g:
            raise ConfigError(
                f"homogeneous budget {r_homogeneous} outside [1, {r_g}]"
            )
        r_i[:] = r_homogeneous
    elif kind == "uniform":
        for i in range(k):
            r_i[i] = 1 + rng.randint(r_g)
    elif kind == "heavy_tail":
        for i in range(k):
            r = 1
            while r < r_g and rng.uniform() < 0.5:
                r += 1
            r_i[i] = r
    else:  # normal
        center = r_g / 2.0
        sd = r_g / 4.0
        for i in range(k):
            r = round(center + sd * rng.gaussian())
            r_i[i] = min(max(r, 1), r_g)
    return RankBudgetAssignment(kind=kind, r_i=r_i)


def train_test_split(dataset: Dataset, test_fraction: float,
                     rng: Rng) -> tuple[Dataset, Dataset]:
    """Stratified split; per class the held-out indices are drawn by
    shuffling that class's samples with the provided stream."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(
            f"test_fraction must be in (0, 1), got {test_fraction}"
        )
    train_ix: list[int] = []
    test_ix: list[int] = []
    for c in range(dataset.num_classes):
        class_idx = np.nonzero(dataset.y == c)[0]
        if class_idx.size < 2:
            raise ConfigError(f"class {c} too small to split")
        perm = rng.permutation(class_idx.size)
        n_test = max(1, int(round(class_idx.size * test_fraction)))
        shuffled = class_idx[perm]
        test_ix.extend(int(i) for i in shuffled[:n_test])
        train_ix.extend(int(i) for i in shuffled[n_test:])
    train_ix.sort()
    test_ix.sort()
    tr = np.array(train_ix, dtype=np.int64)
    te = np.array(test_ix, dtype=np.int64)
    return (
        Dataset(dataset.x[tr], dataset.y[tr], dataset.num_classes),
        Dataset(dataset.x[te], dataset.y[te], dataset.num_classes),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Columnar text snapshot: header ``n d num_classes``, then one line
    per sample: label followed by the d feature values (%.17g, so the
    roundtrip is exact)."""
    lines = [f"{dataset.n} {dataset.d} {dataset.num_classes}"]
    for i in range(dataset.n):
        feats = " ".join("%.17g" % v for v in dataset.x[i])
        lines.append(f"{int(dataset.y[i])} {feats}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text().strip().split("\n")
    try:
        n, d, num_classes = (int(v) for v in text[0].split())
    except ValueError as exc:
        raise ConfigError(f"bad dataset header {text[0]!r}") from exc
    if len(text) != n + 1:
        raise ConfigError(f"expected {n} sample lines, got {len(text) - 1}")
    x = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    for i, line in enumerate(text[1:]):
        parts = line.split()
        if len(parts) != d + 1:
            raise ConfigError(f"line {i + 2}: expected {d + 1} fields")
        y[i] = int(parts[0])
        x[i] = [float(v) for v in parts[1:]]
    if ((y < 0) | (y >= num_classes)).any():
        raise ConfigError("labels outside [0, num_classes)")
    return Dataset(x=x, y=y, num_classes=num_classes)
