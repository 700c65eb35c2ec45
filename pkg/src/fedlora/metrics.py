"""Measurement instruments: aggregation-discordance norm, communication
accounting, client-similarity matrices, average gradient similarity, and
update-reachability checks.

Everything here is diagnostic: nothing feeds back into training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .linalg import frobenius_norm, svd_truncated


@dataclass
class RoundReport:
    """Per-round record emitted by the training loop."""

    round: int
    phase: str  # trainable factor this round ("b", "a", or "both")
    strategy: str
    train_loss: float
    test_accuracy: float
    uploaded_params: int
    cumulative_uploaded: int
    discordance: float | None = None
    selected_ranks: list[list[list[int]]] | None = None  # [client][module] -> ranks

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "phase": self.phase,
            "strategy": self.strategy,
            "train_loss": self.train_loss,
            "test_accuracy": self.test_accuracy,
            "uploaded_params": self.uploaded_params,
            "cumulative_uploaded": self.cumulative_uploaded,
            "discordance": self.discordance,
            "selected_ranks": self.selected_ranks,
        }


@dataclass
class SimilarityMatrix:
    """K x K symmetric client-similarity grid."""

    kind: str  # "rank_jaccard" | "update_cosine"
    values: np.ndarray


def discordance(b_stacks: list[np.ndarray], a_stacks: list[np.ndarray],
                weights: list[float]) -> float:
    """Norm of the gap between averaging products and multiplying averages.

    Per module: || sum_k w_k B_k A_k - (sum_k w_k B_k)(sum_k w_k A_k) ||_F,
    summed over modules. Zero (to rounding) whenever one factor is shared
    by all clients, which is exactly why frozen-factor aggregation is
    exact and independent-factor averaging is not.
    """
    k = len(b_stacks)
    if k < 1 or len(a_stacks) != k or len(weights) != k:
        raise ConfigError("need matching non-empty factor and weight lists")
    n_modules = b_stacks[0].shape[0]
    total = 0.0
    for mi in range(n_modules):
        avg_prod = None
        avg_b = None
        avg_a = None
        for bk, ak, w in zip(b_stacks, a_stacks, weights):
            prod = w * (bk[mi] @ ak[mi])
            avg_prod = prod if avg_prod is None else avg_prod + prod
            wb = w * bk[mi]
            wa = w * ak[mi]
            avg_b = wb if avg_b is None else avg_b + wb
            avg_a = wa if avg_a is None else avg_a + wa
        total += frobenius_norm(avg_prod - avg_b @ avg_a)
    return total


_STRATEGY_NAMES = ("fl_lora", "ffa_lora", "flexlora", "hetlora", "lora_a2")


def comm_cost(strategy: str, d1: int, d2: int, n_modules: int,
              n_clients: int = 0, rank: int = 0,
              client_ranks: list[int] | None = None,
              selected_counts: list[int] | None = None,
              phase: str = "b") -> int:
    """Parameters uploaded by all clients in one round.

    Per client per module: both-factor strategies (fl_lora, flexlora)
    upload rank*(d1+d2); ffa_lora uploads the B factor only, rank*d1;
    hetlora uploads r_k*(d1+d2) with per-client ranks; lora_a2 uploads
    one vector of length d1 (B rounds) or d2 (A rounds) per selected
    rank, with ``selected_counts`` giving each client's total selected
    ranks across all modules.
    """
    if strategy not in _STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    if strategy in ("fl_lora", "flexlora"):
        return n_clients * n_modules * rank * (d1 + d2)
    if strategy == "ffa_lora":
        return n_clients * n_modules * rank * d1
    if strategy == "hetlora":
        if client_ranks is None:
            raise ConfigError("hetlora accounting needs client_ranks")
        return sum(int(r) * (d1 + d2) * n_modules for r in client_ranks)
    if selected_counts is None:
        raise ConfigError("lora_a2 accounting needs selected_counts")
    vec_len = d1 if phase == "b" else d2
    return sum(int(c) * vec_len for c in selected_counts)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def rank_jaccard(selected_grids: list[np.ndarray]) -> SimilarityMatrix:
    """Jaccard overlap of clients' selected (module, rank) sets.

    ``selected_grids`` are the boolean (M, r_G) selection grids, one per
    client. Entry (j, k) = |R_j intersect R_k| / |R_j union R_k|.
    """
    k = len(selected_grids)
    if k < 1:
        raise ConfigError("need at least one selection grid")
    values = np.zeros((k, k))
    for j in range(k):
        for l in range(j, k):
            inter = int(np.sum(selected_grids[j] & selected_grids[l]))
            union = int(np.sum(selected_grids[j] | selected_grids[l]))
            if union == 0:
                sim = 1.0 if j == l else 0.0
            else:
                sim = inter / union
            values[j, l] = sim
            values[l, j] = sim
    return SimilarityMatrix(kind="rank_jaccard", values=values)


def update_cosine(updates: list[np.ndarray]) -> SimilarityMatrix:
    """Cosine similarity of clients' flattened weight updates.

    Each update is the client's stacked delta-W (any shape; flattened
    here). All-zero updates get 0 similarity by convention, including on
    the diagonal.
    """
    k = len(updates)
    if k < 2:
        raise ConfigError("need at least two clients")
    flats = [u.ravel() for u in updates]
    values = np.zeros((k, k))
    for j in range(k):
        for l in range(j, k):
            sim = _cosine(flats[j], flats[l])
            values[j, l] = sim
            values[l, j] = sim
    return SimilarityMatrix(kind="update_cosine", values=values)


def average_gradient_similarity(updates_t: list[np.ndarray],
                                updates_prev: list[np.ndarray]) -> float:
    """Mean pairwise cosine of per-client round-over-round update deltas.

    delta_i = flat(updates_t[i]) - flat(updates_prev[i]); the average runs
    over all ordered pairs including i = j, so identical nonzero deltas
    give exactly 1.
    """
    n = len(updates_t)
    if n < 1 or len(updates_prev) != n:
        raise ConfigError("need matching per-client update lists")
    deltas = [updates_t[i].ravel() - updates_prev[i].ravel()
              for i in range(n)]
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += _cosine(deltas[i], deltas[j])
    return total / (n * n)


@dataclass
class ReachRecord:
    """Reachability diagnostics for one run's cumulative update.

    ``rowspace_residual``: per-module || dW (I - pinv(A) A) ||_F, i.e.
    how much of the update escapes the row space of the initial A (should
    be ~0 when A is frozen at init). ``numerical_rank``: per-module count
    of singular values above 1e-8.
    """

    strategy: str
    rowspace_residual: list[float] = field(default_factory=list)
    numerical_rank: list[int] = field(default_factory=list)


_RANK_SV_THRESHOLD = 1e-8


def numerical_rank(m: np.ndarray) -> int:
    """Count of singular values above the fixed 1e-8 threshold."""
    res = svd_truncated(m, min(m.shape))
    return int(np.sum(res.s > _RANK_SV_THRESHOLD))


def reach_checks(cumulative_dw: list[np.ndarray], strategy: str,
                 a_init: list[np.ndarray] | None = None) -> ReachRecord:
    """Verify which update subspaces a strategy can express.

    For ffa_lora the update must live in the row space of the frozen
    initial A, so the projection residual is reported; every strategy
    gets per-module numerical ranks (rank-r factorizations cannot exceed
    r, while alternating sparse selection can accumulate beyond it).
    """
    if strategy not in _STRATEGY_NAMES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    record = ReachRecord(strategy=strategy)
    for mi, dw in enumerate(cumulative_dw):
        record.numerical_rank.append(numerical_rank(dw))
        if strategy == "ffa_lora":
            if a_init is None:
                raise ConfigError("ffa_lora reach check needs a_init")
            a = a_init[mi]
            proj = np.eye(a.shape[1]) - np.linalg.pinv(a) @ a
            record.rowspace_residual.append(frobenius_norm(dw @ proj))
    return record
