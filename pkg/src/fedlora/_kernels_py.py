"""Pure numpy implementations of the hot training kernels.

The compiled extension (``fedlora._kernels``) exposes the same two
functions with the same semantics; ``fedlora.backend`` picks one at
import time. Keep the arithmetic here in the exact order described in
the docstrings so the two backends agree to rounding error.

Array layout conventions (all float64, C-contiguous):

* ``w0``   (M, d, d)  frozen per-module base weights, applied as ``h @ w``
* ``bias``  (M, d)
* ``head``  (d, C)
* ``b``    (M, d, r), ``a`` (M, r, d)  adapter factors
* ``x``    (n, d) batch inputs, ``labels`` (n,) int64
* ``gb``/``ga``  preallocated gradient outputs, same shapes as b/a
"""

from __future__ import annotations

import numpy as np

ACT_TANH = 0
ACT_RELU = 1
ACT_LINEAR = 2


def ce_loss_and_grads(w0, bias, head, b, a, scaling, act_kind, x, labels,
                      gb, ga, need_gb, need_ga):
    """Forward pass, mean softmax cross-entropy, and backprop into the
    adapter factors only (base weights and head are frozen).

    Each module applies ``h <- act(h @ (w0 + scaling * b @ a) + bias)``;
    the effective weight is materialized so a merged model evaluates the
    same sums. Returns the scalar loss; gradients are written into
    ``gb``/``ga`` where requested.
    """
    n_modules = w0.shape[0]
    n = x.shape[0]

    hs = [x]
    weffs = []
    h = x
    for mi in range(n_modules):
        weff = w0[mi] + scaling * (b[mi] @ a[mi])
        z = h @ weff + bias[mi]
        if act_kind == ACT_TANH:
            h = np.tanh(z)
        elif act_kind == ACT_RELU:
            h = np.maximum(z, 0.0)
        else:
            h = z
        weffs.append(weff)
        hs.append(h)

    logits = h @ head
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(sez[:, 0]) + zmax[:, 0] - logits[rows, labels]))

    dlogits = ez / sez
    dlogits[rows, labels] -= 1.0
    dlogits /= n

    dh = dlogits @ head.T
    for mi in range(n_modules - 1, -1, -1):
        hout = hs[mi + 1]
        if act_kind == ACT_TANH:
            dz = dh * (1.0 - hout * hout)
        elif act_kind == ACT_RELU:
            dz = dh * (hout > 0.0)
        else:
            dz = dh
        gw = hs[mi].T @ dz
        if need_gb:
            gb[mi] = scaling * (gw @ a[mi].T)
        if need_ga:
            ga[mi] = scaling * (b[mi].T @ gw)
        if mi > 0:
            dh = dz @ weffs[mi].T
    return loss


def adamw_update(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay,
                 mask):
    """One AdamW step on flat arrays, in place.

    Moments are updated everywhere; the parameter itself is only touched
    where ``mask`` (uint8, same length, or None for all) is nonzero, so
    excluded entries stay bit-identical.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    step = (-lr) * (m / bc1) / (np.sqrt(v / bc2) + eps)
    if weight_decay != 0.0:
        step -= (lr * weight_decay) * param
    if mask is None:
        param += step
    else:
        sel = mask.view(bool)
        param[sel] += step[sel]
