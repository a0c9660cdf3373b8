"""Shared pre-norm transformer building blocks for both encoders.

Pre-norm is used because it stays stable from random init at small scale.
The feed-forward activation is leaky ReLU, keeping the primitive set of the
tensor core minimal.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

MASK_BIAS = -1e9  # exp() underflows to exactly 0 for masked positions


def linear(x, w, b=None):
    """Affine map over the last axis of x (any leading shape)."""
    lead = x.shape[:-1]
    flat = T.reshape(x, (-1, x.shape[-1])) if x.ndim != 2 else x
    out = T.matmul(flat, w)
    if b is not None:
        out = T.add(out, b)
    if x.ndim != 2:
        out = T.reshape(out, (*lead, w.shape[-1]))
    return out


def _param(rng, shape, dtype):
    # fan-scaled init: keeps attention scores O(1) at random init, which both
    # trains faster and keeps gradients large enough to finite-difference
    std = math.sqrt(2.0 / (shape[0] + shape[1]))
    return Tensor(rng.truncated_normal(shape, std=std, dtype=dtype), requires_grad=True)


class TransformerLayer:
    """One pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, rng, d, heads, ffn_mult=4, dtype=np.float32, ffn_alpha=0.01):
        if d % heads != 0:
            raise ValueError(f"head count {heads} must divide width {d}")
        self.d = d
        self.heads = heads
        self.ffn_alpha = ffn_alpha
        f = d * ffn_mult
        self.ln1_g = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.wq = _param(rng, (d, d), dtype)
        self.wk = _param(rng, (d, d), dtype)  # no key bias: softmax is invariant to it
        self.wv = _param(rng, (d, d), dtype)
        self.wo = _param(rng, (d, d), dtype)
        self.bq = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.bv = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.bo = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.ln2_g = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.w1 = _param(rng, (d, f), dtype)
        self.b1 = Tensor(np.zeros(f, dtype=dtype), requires_grad=True)
        self.w2 = _param(rng, (f, d), dtype)
        self.b2 = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def parameters(self, prefix):
        names = ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "bq", "bv", "bo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]
        return {f"{prefix}.{n}": getattr(self, n) for n in names}

    def _split_heads(self, x, b, s):
        x = T.reshape(x, (b, s, self.heads, self.d // self.heads))
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (b * self.heads, s, self.d // self.heads))

    def _merge_heads(self, x, b, s):
        x = T.reshape(x, (b, self.heads, s, self.d // self.heads))
        x = T.transpose(x, (0, 2, 1, 3))
        return T.reshape(x, (b, s, self.d))

    def __call__(self, x, mask_bias=None):
        """x: (batch, seq, d). mask_bias: constant (batch*heads, 1, seq) or None."""
        b, s, _ = x.shape
        h = T.layer_norm(x, self.ln1_g, self.ln1_b)
        q = self._split_heads(linear(h, self.wq, self.bq), b, s)
        k = self._split_heads(linear(h, self.wk), b, s)
        v = self._split_heads(linear(h, self.wv, self.bv), b, s)
        att = T.scaled_dot_attention(q, k, v, mask_bias)
        att = linear(self._merge_heads(att, b, s), self.wo, self.bo)
        x = T.add(x, att)
        h = T.layer_norm(x, self.ln2_g, self.ln2_b)
        h = linear(T.leaky_relu(linear(h, self.w1, self.b1), self.ffn_alpha), self.w2, self.b2)
        return T.add(x, h)


def key_mask_bias(mask, heads, dtype):
    """(batch, seq) 0/1 key mask -> constant (batch*heads, 1, seq) additive bias."""
    bias = np.where(mask > 0, 0.0, MASK_BIAS).astype(dtype)
    bias = np.repeat(bias[:, None, :], heads, axis=0).reshape(-1, 1, mask.shape[1])
    return Tensor(bias, dtype=dtype)


def broadcast_rows(row, batch, dtype):
    """Lift a (n, d) tensor to (batch, n, d), keeping gradients flowing."""
    z = Tensor(np.zeros((batch, *row.shape), dtype=dtype))
    return T.add(z, T.reshape(row, (1, *row.shape)))
