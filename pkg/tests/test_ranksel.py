"""Importance scoring, global top-k selection, masked steps, and the
sparse upload codec against dense oracles."""

import numpy as np
import pytest

from fedlora.errors import ConfigError, ProtocolViolation
from fedlora.linalg import Rng
from fedlora.model import Batch, loss_and_grads, stack_factors
from fedlora.optim import LrPolicy
from fedlora.ranksel import (
    ImportanceScores,
    RankMask,
    aggregate_sparse,
    apply_mask_to_step,
    decode_sparse_upload,
    encode_sparse_upload,
    importance_scores,
    probe_contribution,
    select_ranks,
)
from conftest import random_batch, small_model


def _random_stacks(nprng, m=3, d=6, r=4):
    delta_b = nprng.normal(size=(m, d, r))
    a = nprng.normal(size=(m, r, d))
    return delta_b, a


def test_contribution_scores_match_dense_outer_product_oracle(nprng):
    """The score of rank i must equal the Frobenius norm of its actual
    weight-update contribution delta_b[:, i] @ a[i, :]."""
    delta_b, a = _random_stacks(nprng)
    scores = importance_scores(delta_b, a, "b", "contribution").scores
    for mi in range(3):
        for i in range(4):
            contrib = np.outer(delta_b[mi][:, i], a[mi][i, :])
            want = float(np.sqrt(np.sum(contrib ** 2)))
            assert abs(scores[mi, i] - want) / want < 1e-12


def test_contribution_scores_a_phase(nprng):
    b = nprng.normal(size=(2, 5, 3))
    delta_a = nprng.normal(size=(2, 3, 5))
    scores = importance_scores(delta_a, b, "a", "contribution").scores
    for mi in range(2):
        for i in range(3):
            contrib = np.outer(b[mi][:, i], delta_a[mi][i, :])
            want = float(np.sqrt(np.sum(contrib ** 2)))
            assert abs(scores[mi, i] - want) / want < 1e-12


def test_magnitude_scores(nprng):
    delta_b, a = _random_stacks(nprng)
    scores = importance_scores(delta_b, a, "b", "magnitude").scores
    for mi in range(3):
        for i in range(4):
            want = float(np.linalg.norm(delta_b[mi][:, i]))
            assert abs(scores[mi, i] - want) < 1e-12


def test_importance_scores_hand_example():
    received = np.array([[[2.0, 0.0], [1.0, -3.0]]])  # (1, 2, 2) A factor
    delta = np.array([[[0.5, -1.0], [2.0, 1.0]]])
    scores = importance_scores(delta, np.zeros((1, 2, 2)), "a",
                               "importance", received=received).scores
    # rank 0: |2*0.5| + |0*-1| = 1; rank 1: |1*2| + |-3*1| = 5
    assert np.allclose(scores, [[1.0, 5.0]])
    with pytest.raises(ConfigError):
        importance_scores(delta, np.zeros((1, 2, 2)), "a", "importance")


def test_zero_delta_gives_zero_scores(nprng):
    _, a = _random_stacks(nprng)
    scores = importance_scores(np.zeros((3, 6, 4)), a, "b", "contribution")
    assert np.array_equal(scores.scores, np.zeros((3, 4)))


def test_select_ranks_exact_budget_and_global_pooling():
    scores = np.array([[0.1, 0.2, 0.3],
                       [5.0, 4.0, 3.0]])
    mask = select_ranks(ImportanceScores(scores=scores), 3)
    assert mask.count == 3
    # all three winners sit in module 1; module 0 gets nothing
    assert mask.pairs() == [(1, 0), (1, 1), (1, 2)]


def test_select_ranks_tie_breaks_toward_lower_pairs():
    scores = np.ones((2, 3))
    mask = select_ranks(ImportanceScores(scores=scores), 4)
    # stable sort on the flattened grid keeps module-major order
    assert mask.pairs() == [(0, 0), (0, 1), (0, 2), (1, 0)]


def test_select_ranks_budget_bounds():
    scores = ImportanceScores(scores=np.ones((2, 2)))
    with pytest.raises(ConfigError):
        select_ranks(scores, 0)
    with pytest.raises(ConfigError):
        select_ranks(scores, 5)


def test_step_masks_match_selection():
    selected = np.array([[True, False], [False, True]])
    mask = RankMask(selected=selected)
    mb = mask.step_mask(0, "b")
    ma = mask.step_mask(1, "a")
    assert mb.shape == (2,) and np.array_equal(mb, [True, False])
    assert ma.shape == (2, 1) and np.array_equal(ma[:, 0], [False, True])


def test_apply_mask_to_step(nprng):
    step = nprng.normal(size=(4, 3))
    dense = np.zeros((4, 3))
    dense[:, 1] = 1.0
    out = apply_mask_to_step(step, dense)
    assert np.array_equal(out[:, 1], step[:, 1])
    assert np.array_equal(out[:, [0, 2]], np.zeros((4, 2)))
    with pytest.raises(ConfigError):
        apply_mask_to_step(step, np.zeros((3, 4)))


def test_encode_decode_roundtrip(nprng):
    snapshot = nprng.normal(size=(2, 5, 3))
    trained = snapshot.copy()
    selected = np.array([[True, False, True], [False, False, True]])
    for mi in range(2):
        for i in range(3):
            if selected[mi, i]:
                trained[mi][:, i] += nprng.normal(size=5)
    upload = encode_sparse_upload(trained, snapshot,
                                  RankMask(selected=selected), "b")
    assert upload.uploaded_params == 3 * 5
    dense = decode_sparse_upload(upload, snapshot)
    assert np.array_equal(dense, trained - snapshot)


def test_encode_rejects_unselected_modification(nprng):
    snapshot = nprng.normal(size=(1, 4, 2))
    trained = snapshot.copy()
    trained[0][:, 1] += 1.0  # rank 1 moved but only rank 0 is selected
    selected = np.array([[True, False]])
    with pytest.raises(ProtocolViolation, match="module 0, rank 1"):
        encode_sparse_upload(trained, snapshot,
                             RankMask(selected=selected), "b")


def test_aggregate_sparse_matches_masked_fedavg_oracle(nprng):
    """Dense oracle: each selected (module, rank) takes the weighted mean
    of the selecting clients' trained vectors, with weights renormalized
    over that subset; unselected ranks keep the snapshot bit-for-bit."""
    m, d, r = 2, 4, 3
    snapshot = nprng.normal(size=(m, d, r))
    weights = [0.5, 0.3, 0.2]
    selections = [
        np.array([[True, False, False], [True, False, False]]),
        np.array([[True, True, False], [False, False, False]]),
        np.array([[False, True, False], [True, False, False]]),
    ]
    uploads = []
    trained_all = []
    for sel in selections:
        trained = snapshot.copy()
        for mi in range(m):
            for i in range(r):
                if sel[mi, i]:
                    trained[mi][:, i] += nprng.normal(size=d)
        trained_all.append(trained)
        uploads.append(encode_sparse_upload(
            trained, snapshot, RankMask(selected=sel), "b"))

    got = aggregate_sparse(uploads, weights, snapshot, "b")

    want = snapshot.copy()
    for mi in range(m):
        for i in range(r):
            sel_w = [w for sel, w in zip(selections, weights) if sel[mi, i]]
            if not sel_w:
                continue
            total = sum(sel_w)
            acc = np.zeros(d)
            for sel, w, tr in zip(selections, weights, trained_all):
                if sel[mi, i]:
                    acc += (w / total) * (tr[mi][:, i] - snapshot[mi][:, i])
            want[mi][:, i] = snapshot[mi][:, i] + acc
    assert np.max(np.abs(got - want)) < 1e-12
    # rank (0, 2) was selected by nobody: bit-identical to the snapshot
    assert np.array_equal(got[0][:, 2], snapshot[0][:, 2])
    assert np.array_equal(got[1][:, 1], snapshot[1][:, 1])
    assert np.array_equal(got[1][:, 2], snapshot[1][:, 2])


def test_aggregate_sparse_single_selector_takes_value_verbatim(nprng):
    snapshot = nprng.normal(size=(1, 3, 2))
    trained = snapshot.copy()
    trained[0][:, 0] += nprng.normal(size=3)
    sel = np.array([[True, False]])
    up = encode_sparse_upload(trained, snapshot, RankMask(selected=sel), "b")
    zero_sel = np.array([[False, True]])
    other = encode_sparse_upload(snapshot.copy() + _only(snapshot, 1),
                                 snapshot, RankMask(selected=zero_sel), "b")
    got = aggregate_sparse([up, other], [0.25, 0.75], snapshot, "b")
    # weight renormalization over the selecting subset {client 0} makes
    # its trained vector land exactly
    assert np.allclose(got[0][:, 0], trained[0][:, 0], atol=1e-15)


def _only(snapshot, rank):
    bump = np.zeros_like(snapshot)
    bump[0][:, rank] = 0.5
    return bump


def test_probe_leaves_inputs_untouched(nprng):
    model = small_model(d=6, layers=1, modules_per_layer=2, num_classes=3,
                        r_g=3, seed=17)
    adapters = [ad.copy() for ad in model.adapters]
    for ad in adapters:
        ad.b[:] = nprng.normal(size=ad.b.shape) * 0.1
    before_b, before_a = stack_factors(adapters)
    x, y = random_batch(model, 12, nprng)
    delta = probe_contribution(model, adapters, x, y, "b",
                               LrPolicy(eta_a=0.01), 4, Rng(55))
    after_b, after_a = stack_factors(adapters)
    assert np.array_equal(before_b, after_b)
    assert np.array_equal(before_a, after_a)
    assert delta.shape == before_b.shape
    assert np.any(delta != 0.0)


def test_probe_deterministic(nprng):
    model = small_model(d=6, layers=1, modules_per_layer=1, num_classes=3,
                        r_g=2, seed=18)
    x, y = random_batch(model, 10, nprng)
    d1 = probe_contribution(model, model.adapters, x, y, "a",
                            LrPolicy(eta_a=0.01), 4, Rng(70))
    d2 = probe_contribution(model, model.adapters, x, y, "a",
                            LrPolicy(eta_a=0.01), 4, Rng(70))
    assert np.array_equal(d1, d2)


def test_probe_actually_descends(nprng):
    """The probe's one epoch must reduce the loss it trains on; this
    guards against a sign slip in the scratch update."""
    model = small_model(d=8, layers=1, modules_per_layer=1, num_classes=3,
                        r_g=2, seed=19)
    x, y = random_batch(model, 24, nprng)
    batch = Batch(np.ascontiguousarray(x), y)
    loss0, _ = loss_and_grads(model, model.adapters, batch)
    # note the probe trains B at b_multiplier times this rate
    delta = probe_contribution(model, model.adapters, x, y, "b",
                               LrPolicy(eta_a=0.002), 8, Rng(71))
    adapters = [ad.copy() for ad in model.adapters]
    for mi, ad in enumerate(adapters):
        ad.b[:] += delta[mi]
    loss1, _ = loss_and_grads(model, adapters, batch)
    assert loss1 < loss0


def test_scores_validation():
    with pytest.raises(ConfigError):
        ImportanceScores(scores=np.array([[1.0, -0.5]]))
    with pytest.raises(ConfigError):
        ImportanceScores(scores=np.array([[np.nan, 1.0]]))
