"""Modality projections, fusion, and the stance classifier head."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

FUSION_MODES = ("concat", "cross_attention")


class FusionParams:
    """Dense projections to a shared width, a fusion rule, and a linear
    softmax head. Both fusion modes produce a 2*d_hidden vector, so
    checkpoints differ only in the fusion parameters themselves."""

    def __init__(self, rng, d_text, d_vis, d_hidden, n_labels, mode="concat",
                 leaky_alpha=0.01, dtype=np.float32):
        if mode not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {mode!r}")
        self.mode = mode
        self.d_hidden = d_hidden
        self.n_labels = n_labels
        self.leaky_alpha = leaky_alpha
        self.dtype = dtype

        def w(shape, std=None):
            if std is None:
                std = float(np.sqrt(2.0 / (shape[0] + shape[1])))
            return Tensor(rng.truncated_normal(shape, std=std, dtype=dtype), requires_grad=True)

        def b(n):
            return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

        self.w_text, self.b_text = w((d_text, d_hidden)), b(d_hidden)
        self.w_vis, self.b_vis = w((d_vis, d_hidden)), b(d_hidden)
        # small head init keeps the starting loss at the uniform-softmax entropy
        self.w_out, self.b_out = w((2 * d_hidden, n_labels), std=0.02), b(n_labels)
        if mode == "cross_attention":
            # one single-head attention per direction; each modality is a
            # length-1 sequence attending to the other
            self.xa_q_text, self.xa_k_vis, self.xa_v_vis = w((d_hidden, d_hidden)), w((d_hidden, d_hidden)), w((d_hidden, d_hidden))
            self.xa_q_vis, self.xa_k_text, self.xa_v_text = w((d_hidden, d_hidden)), w((d_hidden, d_hidden)), w((d_hidden, d_hidden))

    def parameters(self, prefix="fusion"):
        out = {f"{prefix}.w_text": self.w_text, f"{prefix}.b_text": self.b_text,
               f"{prefix}.w_vis": self.w_vis, f"{prefix}.b_vis": self.b_vis,
               f"{prefix}.w_out": self.w_out, f"{prefix}.b_out": self.b_out}
        if self.mode == "cross_attention":
            out.update({f"{prefix}.xa_q_text": self.xa_q_text, f"{prefix}.xa_k_vis": self.xa_k_vis,
                        f"{prefix}.xa_v_vis": self.xa_v_vis, f"{prefix}.xa_q_vis": self.xa_q_vis,
                        f"{prefix}.xa_k_text": self.xa_k_text, f"{prefix}.xa_v_text": self.xa_v_text})
        return out


def project_modalities(cls_text, cls_vis, params):
    """Leaky-ReLU dense projections of both class vectors to d_hidden."""
    h_text = T.leaky_relu(T.add(T.matmul(cls_text, params.w_text), params.b_text), params.leaky_alpha)
    h_vis = T.leaky_relu(T.add(T.matmul(cls_vis, params.w_vis), params.b_vis), params.leaky_alpha)
    return h_text, h_vis


def _one_direction_attention(query, key, value, wq, wk, wv):
    b, dh = query.shape
    q = T.reshape(T.matmul(query, wq), (b, 1, dh))
    k = T.reshape(T.matmul(key, wk), (b, 1, dh))
    v = T.reshape(T.matmul(value, wv), (b, 1, dh))
    out = T.scaled_dot_attention(q, k, v)
    return T.reshape(out, (b, dh))


def fuse(h_text, h_vis, params):
    """Concatenation fusion, or bidirectional single-head cross attention
    whose two attended vectors are concatenated (same 2*d_hidden width)."""
    if params.mode == "concat":
        return T.concat([h_text, h_vis], axis=1)
    if params.mode == "cross_attention":
        att_text = _one_direction_attention(h_text, h_vis, h_vis,
                                            params.xa_q_text, params.xa_k_vis, params.xa_v_vis)
        att_vis = _one_direction_attention(h_vis, h_text, h_text,
                                           params.xa_q_vis, params.xa_k_text, params.xa_v_text)
        return T.concat([att_text, att_vis], axis=1)
    raise ValueError(f"unknown fusion mode {params.mode!r}")


def logits(h, params):
    return T.add(T.matmul(h, params.w_out), params.b_out)


def classify(h, params):
    """Probability distribution over the label set; rows sum to 1."""
    return T.softmax(logits(h, params), axis=-1)
