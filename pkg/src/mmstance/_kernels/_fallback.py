"""Pure-numpy implementations of the hot per-row kernels.

Semantics contract shared with the compiled backend: reductions accumulate
in float64 regardless of input dtype, outputs are cast back to the input
dtype. Inputs are 2D (rows, width) C-contiguous arrays unless noted.
"""

import numpy as np


def layer_norm_fwd(x, gamma, beta, eps):
    mu = np.mean(x, axis=-1, dtype=np.float64)
    xc = x.astype(np.float64) - mu[:, None]
    var = np.mean(xc * xc, axis=-1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (xc * rstd[:, None]) * gamma.astype(np.float64) + beta.astype(np.float64)
    return y.astype(x.dtype), mu, rstd


def layer_norm_bwd(dy, x, gamma, mu, rstd):
    dy64 = dy.astype(np.float64)
    xhat = (x.astype(np.float64) - mu[:, None]) * rstd[:, None]
    dgamma = np.sum(dy64 * xhat, axis=0)
    dbeta = np.sum(dy64, axis=0)
    dxhat = dy64 * gamma.astype(np.float64)
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx.astype(x.dtype), dgamma.astype(x.dtype), dbeta.astype(x.dtype)


def softmax_fwd(x):
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp((x - m).astype(np.float64))
    s = np.sum(e, axis=-1, keepdims=True)
    return (e / s).astype(x.dtype)


def softmax_bwd(dy, y):
    y64 = y.astype(np.float64)
    dy64 = dy.astype(np.float64)
    inner = np.sum(dy64 * y64, axis=-1, keepdims=True)
    return (y64 * (dy64 - inner)).astype(y.dtype)


def leaky_relu_fwd(x, alpha):
    return np.where(x > 0, x, x * x.dtype.type(alpha))


def leaky_relu_bwd(dy, x, alpha):
    return np.where(x > 0, dy, dy * x.dtype.type(alpha))


def adam_step(p, g, m, v, step, lr, beta1, beta2, eps):
    """One Adam update, in place on flat p/m/v buffers."""
    dt = p.dtype.type
    b1, b2 = dt(beta1), dt(beta2)
    m *= b1
    m += (dt(1.0) - b1) * g
    v *= b2
    v += (dt(1.0) - b2) * g * g
    mhat = m / dt(1.0 - beta1**step)
    vhat = v / dt(1.0 - beta2**step)
    p -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))
