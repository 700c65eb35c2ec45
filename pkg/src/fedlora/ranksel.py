"""Adaptive rank selection: probe deltas, importance scoring, global
top-k rank selection, masks, sparse uploads and sparse aggregation.

All functions operate on stacked factor arrays: B-shaped stacks are
(M, d, r) and A-shaped stacks are (M, r, d), where M is the number of
adapted modules. ``trainable`` selects which factor family a call refers
to ("b" or "a"); rank index ``i`` always addresses column ``[:, i]`` of a
B stack slice or row ``[i, :]`` of an A stack slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolViolation
from .linalg import Rng
from .model import Batch, LoraModel, loss_and_grads
from .optim import AdamWState, LrPolicy, adamw_step, lr_for_factor

_CRITERIA = ("contribution", "magnitude", "importance")


def _check_trainable(trainable: str) -> None:
    if trainable not in ("b", "a"):
        raise ConfigError(f"trainable must be 'b' or 'a', got {trainable!r}")


def _rank_vector(stack_slice: np.ndarray, i: int, trainable: str) -> np.ndarray:
    return stack_slice[:, i] if trainable == "b" else stack_slice[i, :]


@dataclass
class ImportanceScores:
    """One non-negative score per (module, rank) pair, shape (M, r_G)."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        if self.scores.ndim != 2:
            raise ConfigError("scores must be a (modules, ranks) array")
        if not np.isfinite(self.scores).all() or (self.scores < 0).any():
            raise ConfigError("scores must be finite and non-negative")

    @property
    def total(self) -> int:
        return self.scores.size


@dataclass
class RankMask:
    """Selected (module, rank) pairs as a boolean (M, r_G) grid."""

    selected: np.ndarray

    @property
    def count(self) -> int:
        return int(self.selected.sum())

    def pairs(self) -> list[tuple[int, int]]:
        """Selected pairs in (module, rank) ascending order."""
        mm, rr = np.nonzero(self.selected)
        return [(int(m), int(r)) for m, r in zip(mm, rr)]

    def step_mask(self, module_index: int, trainable: str) -> np.ndarray:
        """Boolean mask broadcastable over that module's factor matrix:
        shape (r_G,) for a (d, r_G) B factor, (r_G, 1) for an (r_G, d) A."""
        _check_trainable(trainable)
        row = self.selected[module_index]
        return row if trainable == "b" else row.reshape(-1, 1)

    def dense_mask(self, module_index: int, d: int,
                   trainable: str) -> np.ndarray:
        """Full 0/1 matrix matching the factor's shape, for Hadamard use."""
        _check_trainable(trainable)
        r_g = self.selected.shape[1]
        row = self.selected[module_index].astype(np.float64)
        if trainable == "b":
            return np.broadcast_to(row, (d, r_g)).copy()
        return np.broadcast_to(row.reshape(-1, 1), (r_g, d)).copy()


@dataclass
class SparseUpload:
    """Per-module list of (rank index, delta vector) for one factor family.

    Vectors are deltas against the broadcast snapshot, length d1 for a B
    upload and d2 for an A upload; ``uploaded_params`` counts their total
    entries.
    """

    trainable: str
    entries: list[list[tuple[int, np.ndarray]]]
    uploaded_params: int


def probe_contribution(model: LoraModel, global_adapters: list,
                       shard_x: np.ndarray, shard_y: np.ndarray,
                       trainable: str, policy: LrPolicy, batch_size: int,
                       rng: Rng) -> np.ndarray:
    """One unmasked local epoch on a scratch copy of the trainable factor;
    returns the stacked factor delta (trained minus received).

    The scratch copy is discarded, so probing never perturbs the caller's
    adapters, and the caller passes a dedicated rng stream so it never
    perturbs the training draws either.
    """
    _check_trainable(trainable)
    if shard_x.shape[0] == 0:
        raise ConfigError("cannot probe an empty shard")
    adapters = [ad.copy() for ad in global_adapters]
    received = np.stack([getattr(ad, trainable) for ad in adapters])
    lr = lr_for_factor(policy, trainable)
    states = [AdamWState.for_param(getattr(ad, trainable)) for ad in adapters]
    order = rng.permutation(shard_x.shape[0])
    for start in range(0, order.size, batch_size):
        take = order[start:start + batch_size]
        batch = Batch(np.ascontiguousarray(shard_x[take]), shard_y[take])
        _, grads = loss_and_grads(model, adapters, batch)
        for mi, ad in enumerate(adapters):
            adamw_step(states[mi], getattr(ad, trainable),
                       getattr(grads[mi], trainable), lr)
    trained = np.stack([getattr(ad, trainable) for ad in adapters])
    return trained - received


def importance_scores(factor_delta: np.ndarray, counterpart: np.ndarray,
                      trainable: str, criterion: str = "contribution",
                      received: np.ndarray | None = None) -> ImportanceScores:
    """Score every (module, rank) pair from a probe delta.

    contribution: the Frobenius norm of the rank's weight-update
    contribution, which for the rank-1 outer product factorizes into
    ``norm(delta vector) * norm(counterpart vector)``.
    magnitude: ``norm(delta vector)`` alone.
    importance: sensitivity-style ``sum |received * delta|`` over the
    rank's entries of the trainable factor (requires ``received``).
    """
    _check_trainable(trainable)
    if criterion not in _CRITERIA:
        raise ConfigError(
            f"criterion must be one of {_CRITERIA}, got {criterion!r}"
        )
    if criterion == "importance" and received is None:
        raise ConfigError("importance criterion needs the received factor")
    n_modules = factor_delta.shape[0]
    r_g = factor_delta.shape[2] if trainable == "b" else factor_delta.shape[1]
    scores = np.empty((n_modules, r_g))
    for mi in range(n_modules):
        for i in range(r_g):
            dv = _rank_vector(factor_delta[mi], i, trainable)
            if criterion == "contribution":
                other = "a" if trainable == "b" else "b"
                cv = _rank_vector(counterpart[mi], i, other)
                scores[mi, i] = np.linalg.norm(dv) * np.linalg.norm(cv)
            elif criterion == "magnitude":
                scores[mi, i] = np.linalg.norm(dv)
            else:
                pv = _rank_vector(received[mi], i, trainable)
                scores[mi, i] = np.abs(pv * dv).sum()
    return ImportanceScores(scores=scores)


def select_ranks(scores: ImportanceScores, budget: int) -> RankMask:
    """Keep the ``budget`` highest-scoring (module, rank) pairs across the
    whole model; no per-module quota, so a module may get zero ranks.

    Ties break toward lower (module, rank): flattened C order is exactly
    that order, and the stable sort preserves it among equal scores.
    """
    if not 1 <= budget <= scores.total:
        raise ConfigError(
            f"selection budget {budget} outside [1, {scores.total}]"
        )
    flat = scores.scores.ravel()
    order = np.argsort(-flat, kind="stable")
    selected = np.zeros(flat.size, dtype=bool)
    selected[order[:budget]] = True
    mask = RankMask(selected=selected.reshape(scores.scores.shape))
    assert mask.count == budget
    return mask


def apply_mask_to_step(step: np.ndarray, dense_mask: np.ndarray) -> np.ndarray:
    """Hadamard product of a factor-shaped step with a 0/1 mask."""
    if step.shape != dense_mask.shape:
        raise ConfigError(
            f"mask shape {dense_mask.shape} does not match step {step.shape}"
        )
    return step * dense_mask


def encode_sparse_upload(trained: np.ndarray, snapshot: np.ndarray,
                         mask: RankMask, trainable: str) -> SparseUpload:
    """Pack the selected ranks' delta vectors (trained minus snapshot).

    Raises ProtocolViolation if any unselected rank moved: masked training
    guarantees those stay bit-identical, so a difference means the mask
    contract was broken upstream.
    """
    _check_trainable(trainable)
    if trained.shape != snapshot.shape:
        raise ConfigError(
            f"trained shape {trained.shape} != snapshot {snapshot.shape}"
        )
    n_modules = trained.shape[0]
    r_g = mask.selected.shape[1]
    entries: list[list[tuple[int, np.ndarray]]] = []
    count = 0
    for mi in range(n_modules):
        module_entries: list[tuple[int, np.ndarray]] = []
        for i in range(r_g):
            tv = _rank_vector(trained[mi], i, trainable)
            sv = _rank_vector(snapshot[mi], i, trainable)
            if mask.selected[mi, i]:
                delta = tv - sv
                module_entries.append((i, delta.copy()))
                count += delta.size
            elif not np.array_equal(tv, sv):
                raise ProtocolViolation(
                    f"unselected rank (module {mi}, rank {i}) was modified"
                )
        entries.append(module_entries)
    return SparseUpload(trainable=trainable, entries=entries,
                        uploaded_params=count)


def decode_sparse_upload(upload: SparseUpload,
                         like: np.ndarray) -> np.ndarray:
    """Dense masked delta stack (zeros at unselected ranks)."""
    dense = np.zeros_like(like)
    for mi, module_entries in enumerate(upload.entries):
        for i, vec in module_entries:
            if upload.trainable == "b":
                dense[mi][:, i] = vec
            else:
                dense[mi][i, :] = vec
    return dense


def aggregate_sparse(uploads: list[SparseUpload], weights: list[float],
                     snapshot: np.ndarray, trainable: str) -> np.ndarray:
    """Combine sparse uploads onto the snapshot factor.

    Per (module, rank): clients that selected it contribute their delta
    with weight renormalized over the selecting subset, so a rank chosen
    by exactly one client takes that client's trained value verbatim.
    Ranks nobody selected stay bit-identical to the snapshot.
    """
    _check_trainable(trainable)
    if len(uploads) != len(weights):
        raise ConfigError("one weight per upload required")
    if not uploads:
        raise ConfigError("no uploads to aggregate")
    for up in uploads:
        if up.trainable != trainable:
            raise ConfigError(
                f"upload factor kind {up.trainable!r} != {trainable!r}"
            )
    out = snapshot.copy()
    n_modules = snapshot.shape[0]
    # per (module, rank): accumulate weighted deltas and the weight mass
    acc: dict[tuple[int, int], tuple[np.ndarray, float]] = {}
    for up, w in zip(uploads, weights):
        if len(up.entries) != n_modules:
            raise ConfigError("upload module count does not match snapshot")
        for mi, module_entries in enumerate(up.entries):
            for i, vec in module_entries:
                key = (mi, i)
                if key in acc:
                    vsum, wsum = acc[key]
                    acc[key] = (vsum + w * vec, wsum + w)
                else:
                    acc[key] = (w * vec.astype(np.float64), w)
    for (mi, i), (vsum, wsum) in acc.items():
        if wsum <= 0:
            raise ConfigError("selecting clients carry zero total weight")
        if trainable == "b":
            out[mi][:, i] += vsum / wsum
        else:
            out[mi][i, :] += vsum / wsum
    return out
