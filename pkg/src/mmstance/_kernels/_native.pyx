# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-row kernels; same contract as the numpy fallback.

Reductions accumulate in float64, outputs are cast back to the input
dtype. Single-threaded by design so results are reproducible run to run.
"""

import numpy as np

cimport cython
from libc.math cimport exp, sqrt

ctypedef fused real:
    float
    double


def layer_norm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, mu_i, rs
    if real is float:
        y_arr = np.empty((rows, d), dtype=np.float32)
    else:
        y_arr = np.empty((rows, d), dtype=np.float64)
    mu_arr = np.empty(rows, dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef real[:, ::1] y = y_arr
    cdef double[::1] mu = mu_arr
    cdef double[::1] rstd = rstd_arr
    for i in range(rows):
        acc = 0.0
        for j in range(d):
            acc += <double> x[i, j]
        mu_i = acc / d
        acc = 0.0
        for j in range(d):
            acc += (<double> x[i, j] - mu_i) * (<double> x[i, j] - mu_i)
        rs = 1.0 / sqrt(acc / d + eps)
        mu[i] = mu_i
        rstd[i] = rs
        for j in range(d):
            y[i, j] = <real> (((<double> x[i, j] - mu_i) * rs) * <double> gamma[j]
                              + <double> beta[j])
    return y_arr, mu_arr, rstd_arr


def layer_norm_bwd(real[:, ::1] dy, real[:, ::1] x, real[::1] gamma,
                   double[::1] mu, double[::1] rstd):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double xhat, dxh, m1, m2, g
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.empty((rows, d), dtype=dtype)
    dgamma64 = np.zeros(d, dtype=np.float64)
    dbeta64 = np.zeros(d, dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    cdef double[::1] dg = dgamma64
    cdef double[::1] db = dbeta64
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (<double> x[i, j] - mu[i]) * rstd[i]
            g = <double> dy[i, j]
            dg[j] += g * xhat
            db[j] += g
            dxh = g * <double> gamma[j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (<double> x[i, j] - mu[i]) * rstd[i]
            dxh = <double> dy[i, j] * <double> gamma[j]
            dx[i, j] = <real> (rstd[i] * (dxh - m1 - xhat * m2))
    return dx_arr, dgamma64.astype(dtype), dbeta64.astype(dtype)


def softmax_fwd(real[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, s, e
    if real is float:
        y_arr = np.empty((rows, d), dtype=np.float32)
    else:
        y_arr = np.empty((rows, d), dtype=np.float64)
    scratch = np.empty(d, dtype=np.float64)
    cdef real[:, ::1] y = y_arr
    cdef double[::1] buf = scratch
    for i in range(rows):
        m = <double> x[i, 0]
        for j in range(1, d):
            if <double> x[i, j] > m:
                m = <double> x[i, j]
        s = 0.0
        for j in range(d):
            e = exp(<double> x[i, j] - m)
            buf[j] = e
            s += e
        for j in range(d):
            y[i, j] = <real> (buf[j] / s)
    return y_arr


def softmax_bwd(real[:, ::1] dy, real[:, ::1] y):
    cdef Py_ssize_t rows = y.shape[0], d = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double inner
    if real is float:
        dx_arr = np.empty((rows, d), dtype=np.float32)
    else:
        dx_arr = np.empty((rows, d), dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    for i in range(rows):
        inner = 0.0
        for j in range(d):
            inner += <double> dy[i, j] * <double> y[i, j]
        for j in range(d):
            dx[i, j] = <real> (<double> y[i, j] * (<double> dy[i, j] - inner))
    return dx_arr


def leaky_relu_fwd(real[::1] x, double alpha):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef real a = <real> alpha
    if real is float:
        y_arr = np.empty(n, dtype=np.float32)
    else:
        y_arr = np.empty(n, dtype=np.float64)
    cdef real[::1] y = y_arr
    for i in range(n):
        y[i] = x[i] if x[i] > 0 else x[i] * a
    return y_arr


def leaky_relu_bwd(real[::1] dy, real[::1] x, double alpha):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef real a = <real> alpha
    if real is float:
        dx_arr = np.empty(n, dtype=np.float32)
    else:
        dx_arr = np.empty(n, dtype=np.float64)
    cdef real[::1] dx = dx_arr
    for i in range(n):
        dx[i] = dy[i] if x[i] > 0 else dy[i] * a
    return dx_arr


def adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
              long step, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef real b1 = <real> beta1, b2 = <real> beta2, one = <real> 1.0
    cdef real c1 = <real> (1.0 - beta1 ** step)
    cdef real c2 = <real> (1.0 - beta2 ** step)
    cdef real lr_r = <real> lr, eps_r = <real> eps
    cdef real mhat, vhat
    for i in range(n):
        m[i] = b1 * m[i] + (one - b1) * g[i]
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i]
        mhat = m[i] / c1
        vhat = v[i] / c2
        p[i] = p[i] - lr_r * mhat / (<real> sqrt(<double> vhat) + eps_r)
