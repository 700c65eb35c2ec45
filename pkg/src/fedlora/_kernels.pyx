# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the per-batch training kernels.

Mirrors ``fedlora._kernels_py`` operation for operation (matrix products
through BLAS dgemm, elementwise work in C loops) so the two backends
agree to rounding error; see that module for the layout conventions.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

ACT_TANH = 0
ACT_RELU = 1
ACT_LINEAR = 2

cdef int C_ACT_TANH = 0
cdef int C_ACT_RELU = 1


cdef void _gemm(bint ta, bint tb, double alpha, double[:, ::1] a,
                double[:, ::1] b, double beta, double[:, ::1] c) noexcept nogil:
    # c (MxN) = alpha * op(a) (MxK) @ op(b) (KxN) + beta * c, row-major
    # buffers; implemented by computing the transposed product in
    # column-major order, which is the same memory.
    cdef int m = c.shape[0]
    cdef int n = c.shape[1]
    cdef int k = a.shape[0] if ta else a.shape[1]
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = n
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    dgemm(&ctb, &cta, &n, &m, &k, &alpha, &b[0, 0], &ldb,
          &a[0, 0], &lda, &beta, &c[0, 0], &ldc)


def ce_loss_and_grads(double[:, :, ::1] w0, double[:, ::1] bias,
                      double[:, ::1] head, double[:, :, ::1] b,
                      double[:, :, ::1] a, double scaling, int act_kind,
                      double[:, ::1] x, cnp.int64_t[::1] labels,
                      double[:, :, ::1] gb, double[:, :, ::1] ga,
                      bint need_gb, bint need_ga):
    """Forward, mean softmax cross-entropy, and adapter-factor gradients.

    Same contract as the pure numpy implementation.
    """
    cdef int n_modules = w0.shape[0]
    cdef int d = w0.shape[1]
    cdef int n = x.shape[0]
    cdef int n_classes = head.shape[1]
    cdef int mi, i, j

    hs_arr = np.empty((n_modules + 1, n, d))
    weffs_arr = np.empty((n_modules, d, d))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] weffs = weffs_arr
    cdef double val

    hs[0] = x
    for mi in range(n_modules):
        weffs[mi] = w0[mi]
        _gemm(False, False, scaling, b[mi], a[mi], 1.0, weffs[mi])
        _gemm(False, False, 1.0, hs[mi], weffs[mi], 0.0, hs[mi + 1])
        for i in range(n):
            for j in range(d):
                val = hs[mi + 1, i, j] + bias[mi, j]
                if act_kind == C_ACT_TANH:
                    val = tanh(val)
                elif act_kind == C_ACT_RELU:
                    val = val if val > 0.0 else 0.0
                hs[mi + 1, i, j] = val

    logits_arr = np.empty((n, n_classes))
    cdef double[:, ::1] logits = logits_arr
    _gemm(False, False, 1.0, hs[n_modules], head, 0.0, logits)

    dlogits_arr = np.empty((n, n_classes))
    cdef double[:, ::1] dlogits = dlogits_arr
    cdef double loss = 0.0
    cdef double zmax, sez
    for i in range(n):
        zmax = logits[i, 0]
        for j in range(1, n_classes):
            if logits[i, j] > zmax:
                zmax = logits[i, j]
        sez = 0.0
        for j in range(n_classes):
            dlogits[i, j] = exp(logits[i, j] - zmax)
            sez += dlogits[i, j]
        loss += log(sez) + zmax - logits[i, labels[i]]
        for j in range(n_classes):
            dlogits[i, j] /= sez
        dlogits[i, labels[i]] -= 1.0
        for j in range(n_classes):
            dlogits[i, j] /= n
    loss /= n

    dh_arr = np.empty((n, d))
    dz_arr = np.empty((n, d))
    gw_arr = np.empty((d, d))
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double hv

    _gemm(False, True, 1.0, dlogits, head, 0.0, dh)
    for mi in range(n_modules - 1, -1, -1):
        for i in range(n):
            for j in range(d):
                hv = hs[mi + 1, i, j]
                if act_kind == C_ACT_TANH:
                    dz[i, j] = dh[i, j] * (1.0 - hv * hv)
                elif act_kind == C_ACT_RELU:
                    dz[i, j] = dh[i, j] if hv > 0.0 else 0.0
                else:
                    dz[i, j] = dh[i, j]
        _gemm(True, False, 1.0, hs[mi], dz, 0.0, gw)
        if need_gb:
            _gemm(False, True, scaling, gw, a[mi], 0.0, gb[mi])
        if need_ga:
            _gemm(True, False, scaling, b[mi], gw, 0.0, ga[mi])
        if mi > 0:
            _gemm(False, True, 1.0, dz, weffs[mi], 0.0, dh)
    return loss


def adamw_update(double[::1] param, double[::1] grad, double[::1] m,
                 double[::1] v, long long t, double lr, double beta1,
                 double beta2, double eps, double weight_decay, mask):
    """One AdamW step on flat arrays, in place; same contract as the
    numpy implementation (moments always advance, mask gates the
    parameter write so excluded entries stay bit-identical)."""
    cdef Py_ssize_t size = param.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double step
    cdef const unsigned char[::1] mview
    cdef bint has_mask = mask is not None
    if has_mask:
        mview = mask
    for i in range(size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        if has_mask and not mview[i]:
            continue
        step = (-lr) * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
        if weight_decay != 0.0:
            step -= (lr * weight_decay) * param[i]
        param[i] += step
