"""Dense tensors with reverse-mode gradients.

Covers exactly the primitives the stance model's forward pass needs:
matmul (2D and batched 3D), broadcasting add/mul, softmax, layer norm,
leaky ReLU, embedding lookup, concat/slice/reshape/transpose, mean/sum,
and a fused cross-entropy head. Values are float32 by default; float64
is used for gradient checking.

Tensors produced by operations are treated as immutable; gradient
accumulation happens in a single `backward()` pass owned by one thread.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    pass


FLOAT_DTYPES = (np.float32, np.float64)


class Rng:
    """Deterministic random source: same seed, same draws, any platform."""

    algorithm = "pcg64"

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, key):
        """Derive an independent, reproducible child stream."""
        derived = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(derived.generate_state(1, dtype=np.uint64)[0]))

    def normal(self, shape, std=1.0, dtype=np.float32):
        return self._gen.normal(0.0, std, size=shape).astype(dtype)

    def truncated_normal(self, shape, std=0.02, dtype=np.float32):
        """Normal(0, std) with redraws outside +/- 2 std."""
        out = self._gen.normal(0.0, std, size=shape)
        bad = np.abs(out) > 2.0 * std
        while bad.any():
            out[bad] = self._gen.normal(0.0, std, size=int(bad.sum()))
            bad = np.abs(out) > 2.0 * std
        return out.astype(dtype)

    def uniform(self, shape, low, high, dtype=np.float32):
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def shuffle(self, items):
        self._gen.shuffle(items)


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    return np.ascontiguousarray(arr)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in FLOAT_DTYPES else np.float32
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse pass from a scalar. Populates .grad on every reachable
        tensor that requires grad (zeros where nothing flowed)."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node.requires_grad:
                node.grad = np.zeros_like(node.data)
        if self.requires_grad:
            self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _result(data, parents, backward_fn):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, dtype=data.dtype)
    if req:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_dtypes(a, b, opname):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{opname}: dtype mismatch {a.data.dtype.name} vs {b.data.dtype.name}")


def add(a, b):
    if not isinstance(b, Tensor):
        data = a.data + a.data.dtype.type(b)

        def back_scalar(g):
            if a.requires_grad:
                a.grad += g

        return _result(data, (a,), back_scalar)
    _check_dtypes(a, b, "add")
    data = a.data + b.data

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _result(data, (a, b), back)


def mul(a, b):
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(b)
        data = a.data * c

        def back_scalar(g):
            if a.requires_grad:
                a.grad += g * c

        return _result(data, (a,), back_scalar)
    _check_dtypes(a, b, "mul")
    data = a.data * b.data

    def back(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), back)


def matmul(a, b):
    _check_dtypes(a, b, "matmul")
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: incompatible batched shapes {a.shape} x {b.shape}")
    else:
        raise ShapeError(f"matmul: supports 2D or batched 3D, got {a.shape} x {b.shape}")
    data = a.data @ b.data

    def back(g):
        if a.requires_grad:
            a.grad += g @ np.swapaxes(b.data, -1, -2)
        if b.requires_grad:
            b.grad += np.swapaxes(a.data, -1, -2) @ g

    return _result(data, (a, b), back)


def leaky_relu(x, alpha=0.01):
    """x where x > 0, alpha * x otherwise. Gradient at the kink is alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    flat = x.data.reshape(-1)
    data = K.leaky_relu_fwd(flat, alpha).reshape(x.shape)

    def back(g):
        if x.requires_grad:
            x.grad += K.leaky_relu_bwd(g.reshape(-1).copy(), flat, alpha).reshape(x.shape)

    return _result(data, (x,), back)


def softmax(x, axis=-1):
    """Stabilized softmax along `axis`; slices sum to 1."""
    moved = np.moveaxis(x.data, axis, -1)
    lead = moved.shape[:-1]
    rows = np.ascontiguousarray(moved.reshape(-1, moved.shape[-1]))
    y_rows = K.softmax_fwd(rows)
    data = np.moveaxis(y_rows.reshape(*lead, -1), -1, axis)

    def back(g):
        if x.requires_grad:
            g_moved = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(-1, rows.shape[-1]))
            dx = K.softmax_bwd(g_moved, y_rows)
            x.grad += np.moveaxis(dx.reshape(*lead, -1), -1, axis)

    return _result(np.ascontiguousarray(data), (x,), back)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-vector normalization over the last axis, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = x.shape[-1]
    rows = np.ascontiguousarray(x.data.reshape(-1, d))
    y, mu, rstd = K.layer_norm_fwd(rows, gamma.data, beta.data, eps)
    data = y.reshape(x.shape)

    def back(g):
        g_rows = np.ascontiguousarray(g.reshape(-1, d))
        dx, dgamma, dbeta = K.layer_norm_bwd(g_rows, rows, gamma.data, mu, rstd)
        if x.requires_grad:
            x.grad += dx.reshape(x.shape)
        if gamma.requires_grad:
            gamma.grad += dgamma
        if beta.requires_grad:
            beta.grad += dbeta

    return _result(data, (x, gamma, beta), back)


def embedding(table, idx):
    """Row lookup: table (V, d) indexed by an integer array of any shape."""
    idx = np.asarray(idx)
    data = table.data[idx]

    def back(g):
        if table.requires_grad:
            np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, table.shape[-1]))

    return _result(data, (table,), back)


def stack_gather(tensors, idx):
    """Stack tensors[idx[i]] along a new leading axis.

    All tensors are parents, so after backward() untouched ones carry an
    exactly-zero grad rather than None.
    """
    idx = np.asarray(idx, dtype=np.int64)
    data = np.stack([tensors[int(i)].data for i in idx], axis=0)

    def back(g):
        for pos, i in enumerate(idx):
            t = tensors[int(i)]
            if t.requires_grad:
                t.grad += g[pos]

    return _result(data, tuple(tensors), back)


def concat(tensors, axis):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                key = [slice(None)] * g.ndim
                key[axis] = slice(offset, offset + n)
                t.grad += g[tuple(key)]
            offset += n

    return _result(data, tuple(tensors), back)


def slice_(x, key):
    data = x.data[key]

    def back(g):
        if x.requires_grad:
            x.grad[key] += g

    return _result(np.ascontiguousarray(data), (x,), back)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def back(g):
        if x.requires_grad:
            x.grad += g.reshape(x.shape)

    return _result(np.ascontiguousarray(data), (x,), back)


def transpose(x, axes):
    data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def back(g):
        if x.requires_grad:
            x.grad += np.transpose(g, inv)

    return _result(np.ascontiguousarray(data), (x,), back)


def mean(x):
    data = np.array(x.data.mean(dtype=np.float64), dtype=x.data.dtype)
    n = x.data.size

    def back(g):
        if x.requires_grad:
            x.grad += (g / x.data.dtype.type(n)) * np.ones_like(x.data)

    return _result(data, (x,), back)


def sum_(x):
    data = np.array(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def back(g):
        if x.requires_grad:
            x.grad += g * np.ones_like(x.data)

    return _result(data, (x,), back)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    probs = K.softmax_fwd(np.ascontiguousarray(logits.data))
    b = logits.shape[0]
    picked = probs[np.arange(b), labels]
    floor = np.finfo(logits.data.dtype).tiny
    data = np.array(-np.mean(np.log(np.maximum(picked, floor))), dtype=logits.data.dtype)

    def back(g):
        if logits.requires_grad:
            d = probs.astype(np.float64).copy()
            d[np.arange(b), labels] -= 1.0
            logits.grad += (g * (d / b)).astype(logits.data.dtype)

    return _result(data, (logits,), back)


def scaled_dot_attention(q, k, v, mask_bias=None):
    """Batched single- or multi-head attention over (batch, seq, dim) tensors.

    mask_bias, when given, is a constant Tensor broadcastable to the score
    shape (batch, seq_q, seq_k); masked positions carry a large negative
    value so their weights underflow to exactly zero.
    """
    dk = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dk))
    if mask_bias is not None:
        scores = add(scores, mask_bias)
    weights = softmax(scores, axis=-1)
    return matmul(weights, v)


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)
