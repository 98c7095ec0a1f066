# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense-MLP kernels.

Mirrors ``_kernels_py`` function for function. Matrix products stay on
numpy's BLAS (faster than scipy's bundled one on this class of shapes); the
win here is fusing the elementwise passes around them: bias add + relu in one
sweep, activation-gradient masks applied in place, bias-gradient reduction,
and single-pass Adam / soft updates over the flat parameter vector. tanh and
elu use numpy's vectorised transcendental ufuncs.
"""

import numpy as np

from libc.math cimport sqrt, isfinite

cdef enum:
    RELU = 0
    TANH = 1
    ELU = 2

cdef enum:
    SCALED_TANH = 1


cdef void _bias_relu(double* z, const double* b, Py_ssize_t rows, Py_ssize_t cols,
                     bint relu) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double v
    cdef double* row
    for i in range(rows):
        row = z + i * cols
        if relu:
            for j in range(cols):
                v = row[j] + b[j]
                row[j] = v if v > 0.0 else 0.0
        else:
            for j in range(cols):
                row[j] = row[j] + b[j]


cdef void _act_grad(double* dh, const double* a, Py_ssize_t n, int act) noexcept nogil:
    cdef Py_ssize_t i
    if act == RELU:
        for i in range(n):
            dh[i] = dh[i] if a[i] > 0.0 else 0.0
    elif act == TANH:
        for i in range(n):
            dh[i] = dh[i] * (1.0 - a[i] * a[i])
    else:
        for i in range(n):
            dh[i] = dh[i] if a[i] > 0.0 else dh[i] * (a[i] + 1.0)


cdef void _col_sum(const double* dz, double* out, Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef const double* row
    for j in range(cols):
        out[j] = 0.0
    for i in range(rows):
        row = dz + i * cols
        for j in range(cols):
            out[j] += row[j]


def mlp_forward(list weights, list biases, x, int act, int out_kind, double bound):
    cdef Py_ssize_t i, last = len(weights) - 1
    cdef double[:, ::1] z
    cdef const double[::1] b
    cache = [x]
    h = x
    for i in range(last + 1):
        w = weights[i]
        out = np.matmul(h, w.T)
        z = out
        b = biases[i]
        with nogil:
            _bias_relu(&z[0, 0] if z.shape[0] > 0 else NULL, &b[0], z.shape[0], z.shape[1],
                       i < last and act == RELU)
        if i < last:
            if act == TANH:
                np.tanh(out, out=out)
            elif act == ELU:
                pos = np.maximum(out, 0.0)
                np.minimum(out, 0.0, out=out)
                np.expm1(out, out=out)
                out += pos
        elif out_kind == SCALED_TANH:
            np.tanh(out, out=out)
            out *= bound
        cache.append(out)
        h = out
    return h, cache


cdef _apply_act_grad(dh, h_in, int act):
    cdef double[:, ::1] dv = dh
    cdef const double[:, ::1] av = np.ascontiguousarray(h_in)
    if dv.shape[0] == 0 or dv.shape[1] == 0:
        return
    with nogil:
        _act_grad(&dv[0, 0], &av[0, 0], dv.shape[0] * dv.shape[1], act)


def mlp_backward(list weights, list cache, dout, int act, int out_kind, double bound,
                 list gweights, list gbiases, bint need_dx):
    cdef Py_ssize_t i, r, c, last = len(weights) - 1
    cdef double t
    cdef const double[:, ::1] out = cache[len(cache) - 1]
    cdef const double[:, ::1] dsrc = np.ascontiguousarray(dout, dtype=np.float64)
    cdef double[:, ::1] dzv
    cdef double[::1] gb

    dz = np.empty((out.shape[0], out.shape[1]), dtype=np.float64)
    dzv = dz
    with nogil:
        for r in range(dzv.shape[0]):
            for c in range(dzv.shape[1]):
                if out_kind == SCALED_TANH:
                    t = out[r, c] / bound
                    dzv[r, c] = dsrc[r, c] * (bound * (1.0 - t * t))
                else:
                    dzv[r, c] = dsrc[r, c]

    dx = None
    for i in range(last, -1, -1):
        h_in = cache[i]
        np.matmul(dz.T, h_in, out=gweights[i])
        gb = gbiases[i]
        dzv = dz
        if dzv.shape[0] == 0:
            gbiases[i][...] = 0.0
        else:
            with nogil:
                _col_sum(&dzv[0, 0], &gb[0], dzv.shape[0], dzv.shape[1])
        if i > 0:
            dh = np.matmul(dz, weights[i])
            _apply_act_grad(dh, h_in, act)
            dz = dh
        elif need_dx:
            dx = np.matmul(dz, weights[i])
    return dx


def adam_update(double[::1] params, const double[::1] grads, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t i, n = params.shape[0]
    cdef double g, c1 = 1.0 - beta1 ** step, c2 = 1.0 - beta2 ** step
    with nogil:
        for i in range(n):
            g = grads[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g)
            params[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def soft_update(double[::1] target, const double[::1] source, double tau):
    cdef Py_ssize_t i, n = target.shape[0]
    if tau == 0.0:
        return
    with nogil:
        if tau == 1.0:
            for i in range(n):
                target[i] = source[i]
        else:
            for i in range(n):
                target[i] = (1.0 - tau) * target[i] + tau * source[i]


def all_finite(const double[::1] a):
    cdef Py_ssize_t i
    cdef bint ok = True
    with nogil:
        for i in range(a.shape[0]):
            if not isfinite(a[i]):
                ok = False
                break
    return ok
