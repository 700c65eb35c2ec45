"""Federated orchestration: the round loop, client local training, the
alternating-freeze schedule, and the aggregation strategies.

Strategies
----------
fl_lora   : train both factors, average B and A independently (the naive
            scheme whose product-vs-average gap the discordance metric
            measures).
ffa_lora  : A frozen at initialization forever; only B trains and is
            averaged, so aggregation is exact.
flexlora  : train both factors, average the full per-client products,
            re-factorize with a truncated SVD each round.
hetlora   : per-client ranks; each client trains the leading r_k ranks,
            updates are zero-padded and averaged, and ranks beyond every
            client's budget decay by gamma each round.
lora_a2   : alternating freeze (even rounds train B, odd rounds train A)
            plus per-client adaptive rank selection with sparse uploads.

All aggregation is a deterministic sequential reduction in ascending
client order, so results do not depend on client execution order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import metrics, ranksel
from .dp import DpConfig, privatize_update
from .errors import ConfigError, NumericalError, ProtocolViolation
from .linalg import (Rng, STREAM_DP, STREAM_PARTICIPATION, STREAM_PROBE,
                     STREAM_TRAIN, derive_seed, svd_truncated)
from .metrics import RoundReport
from .model import (Batch, LoraModel, accuracy, loss_and_grads,
                    merge_for_eval, stack_factors, unstack_factors)
from .optim import AdamWState, LrPolicy, adamw_step


class Strategy(str, Enum):
    FL_LORA = "fl_lora"
    FFA_LORA = "ffa_lora"
    FLEXLORA = "flexlora"
    HETLORA = "hetlora"
    LORA_A2 = "lora_a2"


def freeze_phase(t: int) -> str:
    """Factor trained in round t under the alternating schedule.

    Rounds are 0-indexed and round 0 must train B: with B initialized to
    zero, the loss gradient with respect to A is identically zero, so
    training A first would be a no-op.
    """
    if t < 0:
        raise ConfigError(f"round index must be >= 0, got {t}")
    return "b" if t % 2 == 0 else "a"


@dataclass
class ClientState:
    """One simulated client: its shard tensors, FedAvg weight, and rank
    budget (the per-module upload rank r_i for lora_a2, or the trained
    leading-rank count r_k for hetlora)."""

    client_id: int
    x: np.ndarray
    y: np.ndarray
    weight: float
    rank_budget: int = 1

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class ClientUpdate:
    """What one client sends back after local training.

    Dense strategies carry factor delta stacks; lora_a2 carries a sparse
    upload instead. ``frozen_digest`` is the sha256 of the factor the
    client was required to keep frozen, letting the server verify the
    freeze contract before aggregating.
    """

    client_id: int
    weight: float
    train_loss: float
    uploaded_params: int
    delta_b: np.ndarray | None = None
    delta_a: np.ndarray | None = None
    sparse: ranksel.SparseUpload | None = None
    frozen_digest: str | None = None
    mask: ranksel.RankMask | None = None


@dataclass
class ServerState:
    """Coordinator-owned globals plus the depth-2 snapshot store.

    ``snapshots[-1]`` is the most recent post-round factor pair (what is
    broadcast this round) and ``snapshots[-2]`` the pair from one round
    earlier; both start at initialization, so in rounds 0 and 1 the
    "two rounds ago" value is the initialization itself.
    """

    model: LoraModel
    strategy: Strategy
    b: np.ndarray
    a: np.ndarray
    round: int = 0
    cumulative_uploaded: int = 0
    snapshots: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @classmethod
    def create(cls, model: LoraModel, strategy: Strategy) -> "ServerState":
        b, a = stack_factors(model.adapters)
        state = cls(model=model, strategy=strategy, b=b, a=a)
        state.snapshots = [(b.copy(), a.copy()), (b.copy(), a.copy())]
        return state

    def adapters(self) -> list:
        """Current global adapters (copies)."""
        ad0 = self.model.adapters[0]
        return unstack_factors(self.b, self.a, ad0.rank, ad0.alpha)

    def push_snapshot(self) -> None:
        self.snapshots = [self.snapshots[-1], (self.b.copy(), self.a.copy())]

    def snapshot_two_ago(self, trainable: str) -> np.ndarray:
        pair = self.snapshots[-2]
        return pair[0] if trainable == "b" else pair[1]


@dataclass
class RunConfig:
    """Knobs for the federated loop itself (the cli layer builds this
    from the experiment file)."""

    strategy: Strategy
    rounds: int = 50
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0
    policy: LrPolicy = field(default_factory=LrPolicy)
    dp: DpConfig = field(default_factory=DpConfig)
    participation_fraction: float = 1.0
    score_criterion: str = "contribution"
    hetlora_gamma: float = 0.99
    compute_discordance: bool = True

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if not 0.0 < self.participation_fraction <= 1.0:
            raise ConfigError(
                "participation_fraction must be in (0, 1], got "
                f"{self.participation_fraction}"
            )
        if not 0.0 < self.hetlora_gamma <= 1.0:
            raise ConfigError(
                f"hetlora_gamma must be in (0, 1], got {self.hetlora_gamma}"
            )
        self.dp.validate()


def _digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _normalize(values: list[float]) -> list[float]:
    total = sum(values)
    if total <= 0:
        raise ConfigError("participant weights must sum to a positive value")
    return [v / total for v in values]


def _lr_pair(cfg: RunConfig) -> tuple[float, float]:
    # the B/A learning-rate asymmetry belongs to the alternating strategy;
    # baselines train both factors at the base rate
    if cfg.strategy is Strategy.LORA_A2:
        return cfg.policy.eta_b, cfg.policy.eta_a
    return cfg.policy.eta_a, cfg.policy.eta_a


def local_train(model: LoraModel, client: ClientState, b: np.ndarray,
                a: np.ndarray, trainable: str, epochs: int, batch_size: int,
                lr_b: float, lr_a: float, rng: Rng,
                mask_b: list[np.ndarray] | None = None,
                mask_a: list[np.ndarray] | None = None) -> ClientUpdate:
    """Run ``epochs`` of minibatch AdamW on the client's shard.

    ``trainable`` is "b", "a" or "both"; frozen factors are never
    stepped. Optional per-module boolean masks restrict which entries of
    a trainable factor may move; masked-out entries stay bit-identical
    (the optimizer applies deltas through the mask, moments still see
    full gradients). Deltas are relative to the received globals; the
    upload count for the sparse strategy is attached later by the caller.
    """
    if trainable not in ("b", "a", "both"):
        raise ConfigError(f"bad trainable {trainable!r}")
    if client.n == 0:
        raise ConfigError(f"client {client.client_id} has an empty shard")
    ad0 = model.adapters[0]
    adapters = unstack_factors(b, a, ad0.rank, ad0.alpha)
    train_b = trainable in ("b", "both")
    train_a = trainable in ("a", "both")
    states_b = [AdamWState.for_param(ad.b) for ad in adapters]
    states_a = [AdamWState.for_param(ad.a) for ad in adapters]

    loss_sum = 0.0
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(client.n)
        for start in range(0, client.n, batch_size):
            take = order[start:start + batch_size]
            batch = Batch(np.ascontiguousarray(client.x[take]),
                          client.y[take])
            loss, grads = loss_and_grads(model, adapters, batch)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"client {client.client_id}: non-finite training loss "
                    "(diverged run)"
                )
            loss_sum += loss
            steps += 1
            for mi, ad in enumerate(adapters):
                if train_b:
                    adamw_step(states_b[mi], ad.b, grads[mi].b, lr_b,
                               mask=None if mask_b is None else mask_b[mi])
                if train_a:
                    adamw_step(states_a[mi], ad.a, grads[mi].a, lr_a,
                               mask=None if mask_a is None else mask_a[mi])

    new_b = np.stack([ad.b for ad in adapters])
    new_a = np.stack([ad.a for ad in adapters])
    if trainable == "b":
        frozen_digest = _digest(a)
    elif trainable == "a":
        frozen_digest = _digest(b)
    else:
        frozen_digest = None
    return ClientUpdate(
        client_id=client.client_id,
        weight=client.weight,
        train_loss=loss_sum / steps,
        uploaded_params=0,
        delta_b=new_b - b if train_b else None,
        delta_a=new_a - a if train_a else None,
        frozen_digest=frozen_digest,
    )


def aggregate_fedavg(base_b: np.ndarray, base_a: np.ndarray,
                     updates: list[ClientUpdate],
                     weights: list[float]) -> tuple[np.ndarray, np.ndarray]:
    """Independent weighted averaging of both factor deltas."""
    if not updates:
        raise ConfigError("no updates to aggregate")
    new_b = base_b.copy()
    new_a = base_a.copy()
    for up, w in zip(updates, weights):
        new_b += w * up.delta_b
        new_a += w * up.delta_a
    return new_b, new_a


def aggregate_frozen(base_b: np.ndarray, base_a: np.ndarray,
                     updates: list[ClientUpdate], weights: list[float],
                     trainable: str) -> tuple[np.ndarray, np.ndarray]:
    """Average only the trainable factor; verify the other stayed frozen.

    With the frozen factor shared, the average of per-client weight
    updates equals the weight update of the averaged factor, so this
    aggregation is exact where independent averaging is not.
    """
    if trainable not in ("b", "a"):
        raise ConfigError(f"bad trainable {trainable!r}")
    frozen_ref = _digest(base_a if trainable == "b" else base_b)
    for up in updates:
        if up.frozen_digest != frozen_ref:
            raise ProtocolViolation(
                f"client {up.client_id} modified its frozen factor"
            )
    new_b = base_b.copy()
    new_a = base_a.copy()
    for up, w in zip(updates, weights):
        if trainable == "b":
            new_b += w * up.delta_b
        else:
            new_a += w * up.delta_a
    return new_b, new_a


def aggregate_flexlora(base_b: np.ndarray, base_a: np.ndarray,
                       updates: list[ClientUpdate], weights: list[float],
                       r_target: int) -> tuple[np.ndarray, np.ndarray]:
    """Average the full per-client factor products, then split the
    average back into rank-``r_target`` factors via truncated SVD
    (B = U sqrt(S), A = sqrt(S) V^T). SVD non-convergence propagates."""
    if not updates:
        raise ConfigError("no updates to aggregate")
    n_modules, d1 = base_b.shape[0], base_b.shape[1]
    d2 = base_a.shape[2]
    if r_target > min(d1, d2):
        raise ConfigError(
            f"r_target {r_target} exceeds min dimension {min(d1, d2)}"
        )
    new_b = np.zeros((n_modules, d1, r_target))
    new_a = np.zeros((n_modules, r_target, d2))
    for mi in range(n_modules):
        avg = np.zeros((d1, d2))
        for up, w in zip(updates, weights):
            bk = base_b[mi] + up.delta_b[mi]
            ak = base_a[mi] + up.delta_a[mi]
            avg += w * (bk @ ak)
        res = svd_truncated(avg, r_target)
        root = np.sqrt(res.s)
        new_b[mi] = res.u * root
        new_a[mi] = root[:, None] * res.vt
    return new_b, new_a


def aggregate_hetlora(base_b: np.ndarray, base_a: np.ndarray,
                      updates: list[ClientUpdate], weights: list[float],
                      client_ranks: list[int],
                      gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padding aggregation for heterogeneous client ranks.

    Each client's deltas occupy only its leading r_k ranks (the caller
    enforces this with masks; verified here), so averaging the padded
    deltas dilutes high ranks trained by few clients. Ranks beyond every
    client's budget are then decayed by gamma, pruning capacity nobody
    can train.
    """
    if not updates:
        raise ConfigError("no updates to aggregate")
    r_g = base_b.shape[2]
    if max(client_ranks) > r_g:
        raise ConfigError(
            f"client rank {max(client_ranks)} exceeds global rank {r_g}"
        )
    for up, rk in zip(updates, client_ranks):
        if np.any(up.delta_b[:, :, rk:] != 0.0) or \
           np.any(up.delta_a[:, rk:, :] != 0.0):
            raise ProtocolViolation(
                f"client {up.client_id} trained ranks beyond its budget {rk}"
            )
    new_b, new_a = aggregate_fedavg(base_b, base_a, updates, weights)
    r_max = max(client_ranks)
    if r_max < r_g:
        new_b[:, :, r_max:] *= gamma
        new_a[:, r_max:, :] *= gamma
    return new_b, new_a


def _hetlora_masks(n_modules: int, r_g: int,
                   r_k: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    col = np.zeros(r_g, dtype=bool)
    col[:r_k] = True
    mask_b = [col for _ in range(n_modules)]
    mask_a = [col.reshape(-1, 1) for _ in range(n_modules)]
    return mask_b, mask_a


def _privatize_dense(update: ClientUpdate, strategy: Strategy,
                     het_rank: int, dp_cfg: DpConfig, n_local: int,
                     rng: Rng) -> None:
    """Clip-and-noise exactly the entries the client transmits."""
    if dp_cfg.is_identity:
        return
    if strategy is Strategy.FFA_LORA:
        update.delta_b = privatize_update([update.delta_b], dp_cfg,
                                          n_local, rng)[0]
    elif strategy is Strategy.HETLORA:
        rk = het_rank
        parts = privatize_update(
            [update.delta_b[:, :, :rk], update.delta_a[:, :rk, :]],
            dp_cfg, n_local, rng,
        )
        db = update.delta_b.copy()
        da = update.delta_a.copy()
        db[:, :, :rk] = parts[0]
        da[:, :rk, :] = parts[1]
        update.delta_b, update.delta_a = db, da
    else:
        noised = privatize_update([update.delta_b, update.delta_a],
                                  dp_cfg, n_local, rng)
        update.delta_b, update.delta_a = noised


def _privatize_sparse(upload: ranksel.SparseUpload, dp_cfg: DpConfig,
                      n_local: int, rng: Rng) -> ranksel.SparseUpload:
    if dp_cfg.is_identity:
        return upload
    vectors = [vec for module in upload.entries for _, vec in module]
    noised = privatize_update(vectors, dp_cfg, n_local, rng)
    it = iter(noised)
    entries = [[(i, next(it)) for i, _ in module] for module in upload.entries]
    return ranksel.SparseUpload(trainable=upload.trainable, entries=entries,
                                uploaded_params=upload.uploaded_params)


def _participants(clients: list[ClientState], cfg: RunConfig,
                  t: int) -> list[ClientState]:
    if cfg.participation_fraction >= 1.0:
        return clients
    n_take = max(1, int(round(cfg.participation_fraction * len(clients))))
    rng = Rng(derive_seed(cfg.seed, STREAM_PARTICIPATION, t))
    order = rng.permutation(len(clients))
    chosen = sorted(int(i) for i in order[:n_take])
    return [clients[i] for i in chosen]


def _a2_selection(server: ServerState, client: ClientState, cfg: RunConfig,
                  trainable: str, t: int) -> ranksel.RankMask:
    """Probe-and-select for one client; full-budget clients skip the
    probe since selection would keep every rank regardless of scores."""
    r_g = server.b.shape[2]
    n_modules = server.b.shape[0]
    if client.rank_budget >= r_g:
        return ranksel.RankMask(selected=np.ones((n_modules, r_g), dtype=bool))
    probe_rng = Rng(derive_seed(cfg.seed, STREAM_PROBE, t, client.client_id))
    delta = ranksel.probe_contribution(
        server.model, server.adapters(), client.x, client.y, trainable,
        cfg.policy, cfg.batch_size, probe_rng,
    )
    counterpart = server.a if trainable == "b" else server.b
    received = server.b if trainable == "b" else server.a
    scores = ranksel.importance_scores(
        delta, counterpart, trainable, criterion=cfg.score_criterion,
        received=received,
    )
    return ranksel.select_ranks(scores, client.rank_budget * n_modules)


def _round_lora_a2(server: ServerState, participants: list[ClientState],
                   weights: list[float], cfg: RunConfig,
                   t: int) -> tuple[list[ClientUpdate], str]:
    trainable = freeze_phase(t)
    snapshot = server.snapshot_two_ago(trainable)
    broadcast = server.b if trainable == "b" else server.a
    if not np.array_equal(snapshot, broadcast):
        # under alternating freeze the factor trained this round was last
        # written two rounds ago, so these must coincide
        raise ProtocolViolation(
            "snapshot factor diverged from the broadcast factor"
        )
    lr_b, lr_a = _lr_pair(cfg)
    updates = []
    for client in participants:
        mask = _a2_selection(server, client, cfg, trainable, t)
        rng = Rng(derive_seed(cfg.seed, STREAM_TRAIN, t, client.client_id))
        n_modules = server.b.shape[0]
        step_masks = [mask.step_mask(mi, trainable) for mi in range(n_modules)]
        up = local_train(
            server.model, client, server.b, server.a, trainable,
            cfg.epochs, cfg.batch_size, lr_b, lr_a, rng,
            mask_b=step_masks if trainable == "b" else None,
            mask_a=step_masks if trainable == "a" else None,
        )
        trained = (broadcast + up.delta_b if trainable == "b"
                   else broadcast + up.delta_a)
        sparse = ranksel.encode_sparse_upload(trained, snapshot, mask,
                                              trainable)
        if not cfg.dp.is_identity:
            dp_rng = Rng(derive_seed(cfg.seed, STREAM_DP, t, client.client_id))
            sparse = _privatize_sparse(sparse, cfg.dp, client.n, dp_rng)
        up.sparse = sparse
        up.mask = mask
        up.uploaded_params = sparse.uploaded_params
        up.delta_b = None
        up.delta_a = None
        updates.append(up)

    uploads = [up.sparse for up in updates]
    new_factor = ranksel.aggregate_sparse(uploads, weights, snapshot,
                                          trainable)
    if trainable == "b":
        server.b = new_factor
    else:
        server.a = new_factor
    return updates, trainable


def _round_dense(server: ServerState, participants: list[ClientState],
                 weights: list[float], cfg: RunConfig,
                 t: int) -> tuple[list[ClientUpdate], str]:
    strategy = server.strategy
    n_modules, d1, r_g = server.b.shape
    d2 = server.a.shape[2]
    lr_b, lr_a = _lr_pair(cfg)
    if strategy is Strategy.FFA_LORA:
        trainable = "b"
    else:
        trainable = "both"
    updates = []
    for client in participants:
        rng = Rng(derive_seed(cfg.seed, STREAM_TRAIN, t, client.client_id))
        mask_b = mask_a = None
        if strategy is Strategy.HETLORA:
            mask_b, mask_a = _hetlora_masks(n_modules, r_g,
                                            client.rank_budget)
        up = local_train(server.model, client, server.b, server.a,
                         trainable, cfg.epochs, cfg.batch_size, lr_b, lr_a,
                         rng, mask_b=mask_b, mask_a=mask_a)
        if strategy is Strategy.FFA_LORA:
            up.delta_a = np.zeros_like(server.a)
            up.uploaded_params = n_modules * r_g * d1
        elif strategy is Strategy.HETLORA:
            up.uploaded_params = client.rank_budget * (d1 + d2) * n_modules
        else:
            up.uploaded_params = n_modules * r_g * (d1 + d2)
        if not cfg.dp.is_identity:
            dp_rng = Rng(derive_seed(cfg.seed, STREAM_DP, t, client.client_id))
            _privatize_dense(up, strategy, client.rank_budget, cfg.dp,
                             client.n, dp_rng)
        updates.append(up)

    if strategy is Strategy.FL_LORA:
        server.b, server.a = aggregate_fedavg(server.b, server.a, updates,
                                              weights)
    elif strategy is Strategy.FFA_LORA:
        server.b, server.a = aggregate_frozen(server.b, server.a, updates,
                                              weights, "b")
    elif strategy is Strategy.FLEXLORA:
        server.b, server.a = aggregate_flexlora(server.b, server.a, updates,
                                                weights, r_g)
    elif strategy is Strategy.HETLORA:
        ranks = [c.rank_budget for c in participants]
        server.b, server.a = aggregate_hetlora(server.b, server.a, updates,
                                               weights, ranks,
                                               cfg.hetlora_gamma)
    else:
        raise ConfigError(f"unhandled strategy {strategy}")
    return updates, trainable


def _round_discordance(broadcast_b: np.ndarray, broadcast_a: np.ndarray,
                       updates: list[ClientUpdate],
                       weights: list[float]) -> float:
    b_stacks = []
    a_stacks = []
    for up in updates:
        if up.sparse is not None:
            dense = ranksel.decode_sparse_upload(
                up.sparse,
                broadcast_b if up.sparse.trainable == "b" else broadcast_a,
            )
            if up.sparse.trainable == "b":
                b_stacks.append(broadcast_b + dense)
                a_stacks.append(broadcast_a)
            else:
                b_stacks.append(broadcast_b)
                a_stacks.append(broadcast_a + dense)
        else:
            db = up.delta_b if up.delta_b is not None else 0.0
            da = up.delta_a if up.delta_a is not None else 0.0
            b_stacks.append(broadcast_b + db)
            a_stacks.append(broadcast_a + da)
    return metrics.discordance(b_stacks, a_stacks, weights)


def _selected_ranks(updates: list[ClientUpdate]) -> list[list[list[int]]]:
    out = []
    for up in updates:
        grid = up.mask.selected
        out.append([
            [int(i) for i in np.nonzero(grid[mi])[0]]
            for mi in range(grid.shape[0])
        ])
    return out


def run_round(server: ServerState, clients: list[ClientState],
              cfg: RunConfig, test_x: np.ndarray,
              test_y: np.ndarray,
              observer: Callable[[int, list[ClientUpdate]], None] | None = None,
              ) -> RoundReport:
    """One federated round: broadcast, local training (with probe and
    selection for the sparse strategy), optional DP, aggregation, and
    evaluation of the merged global model on the held-out test set.

    ``observer``, when given, receives the round index and the raw client
    updates before they are discarded; useful for similarity diagnostics
    that need per-client deltas rather than the aggregate.
    """
    if not clients:
        raise ConfigError("need at least one client")
    t = server.round
    participants = _participants(clients, cfg, t)
    weights = _normalize([c.weight for c in participants])
    broadcast_b = server.b.copy()
    broadcast_a = server.a.copy()

    if server.strategy is Strategy.LORA_A2:
        updates, phase = _round_lora_a2(server, participants, weights, cfg, t)
    else:
        updates, phase = _round_dense(server, participants, weights, cfg, t)

    disc = None
    if cfg.compute_discordance:
        disc = _round_discordance(broadcast_b, broadcast_a, updates, weights)
    if observer is not None:
        observer(t, updates)

    uploaded = sum(up.uploaded_params for up in updates)
    server.cumulative_uploaded += uploaded
    server.push_snapshot()
    server.round += 1

    merged = merge_for_eval(server.model, server.adapters())
    acc = accuracy(merged, merged.adapters, test_x, test_y)
    train_loss = float(sum(w * up.train_loss
                           for up, w in zip(updates, weights)))
    selected = None
    if server.strategy is Strategy.LORA_A2:
        selected = _selected_ranks(updates)
    return RoundReport(
        round=t,
        phase=phase,
        strategy=server.strategy.value,
        train_loss=train_loss,
        test_accuracy=acc,
        uploaded_params=uploaded,
        cumulative_uploaded=server.cumulative_uploaded,
        discordance=disc,
        selected_ranks=selected,
    )


def run_federated(server: ServerState, clients: list[ClientState],
                  cfg: RunConfig, test_x: np.ndarray,
                  test_y: np.ndarray,
                  observer: Callable[[int, list[ClientUpdate]], None] | None = None,
                  ) -> list[RoundReport]:
    """The full round loop; returns one report per round.

    Numerical failures and protocol violations are re-raised with the
    failing round attached so report consumers can locate them.
    """
    cfg.validate()
    reports = []
    for _ in range(cfg.rounds):
        t = server.round
        try:
            reports.append(
                run_round(server, clients, cfg, test_x, test_y,
                          observer=observer))
        except (NumericalError, ProtocolViolation) as exc:
            raise type(exc)(f"round {t}: {exc}") from exc
    return reports


def cumulative_delta_w(server: ServerState) -> list[np.ndarray]:
    """Per-module effective weight change of the current global model
    relative to the frozen base (adapters start at zero contribution)."""
    ad0 = server.model.adapters[0]
    scaling = ad0.alpha / ad0.rank
    return [scaling * (server.b[mi] @ server.a[mi])
            for mi in range(server.b.shape[0])]
