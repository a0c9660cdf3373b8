"""Central-difference verification of reverse-mode gradients.

Meant to run on float64 parameters; float32 rounding drowns out the
finite-difference signal at the thresholds this project uses.
"""

from __future__ import annotations

import zlib

import numpy as np

from .tensor import Rng


class GradCheckError(RuntimeError):
    pass


def grad_check(f, params, h=1e-5, samples_per_param=None, rng=None, require_float64=True,
               refine_below=None, h_ladder=(0.125, 8.0, 64.0)):
    """Compare analytic gradients of a scalar-valued computation `f` against
    central differences.

    f: zero-argument callable; must recompute the loss from the current
       contents of `params` and be deterministic.
    params: mapping name -> Tensor with requires_grad=True.
    samples_per_param: check this many entries per parameter (seeded by
       `rng`); None checks every entry.
    refine_below: central differences are only valid inside an h window per
       direction (activation-kink crossings above it, float cancellation
       below). When set, an entry whose error exceeds this value is retried
       at h scaled by each h_ladder factor and the best estimate kept; a
       genuinely wrong gradient fails at every scale.

    Returns (max_rel_err, worst_name, per_param) where per_param maps each
    name to its worst relative error. Relative error uses the denominator
    |analytic| + |numeric| + 1e-12.
    """
    if require_float64:
        for name, t in params.items():
            if t.data.dtype != np.float64:
                raise GradCheckError(f"parameter {name!r} is {t.data.dtype.name}; grad check needs float64")
    rng = rng or Rng(0)

    loss = f()
    if not np.isfinite(loss.data).all():
        raise GradCheckError(f"loss is non-finite: {loss.data!r}")
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}

    per_param = {}
    worst = 0.0
    worst_name = None
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if samples_per_param is None or samples_per_param >= n:
            positions = np.arange(n)
        else:
            positions = rng.child(zlib.crc32(name.encode())).permutation(n)[:samples_per_param]
        a_flat = analytic[name].reshape(-1)

        def rel_at(pos, step):
            orig = flat[pos]
            flat[pos] = orig + step
            lp = f().item()
            flat[pos] = orig - step
            lm = f().item()
            flat[pos] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradCheckError(f"non-finite loss while perturbing {name}[{pos}]")
            numeric = (lp - lm) / (2.0 * step)
            a = a_flat[pos]
            return abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)

        err = 0.0
        for pos in positions:
            rel = rel_at(pos, h)
            if refine_below is not None and rel > refine_below:
                for factor in h_ladder:
                    rel = min(rel, rel_at(pos, h * factor))
                    if rel <= refine_below:
                        break
            if rel > err:
                err = rel
        per_param[name] = err
        if err >= worst:
            worst = err
            worst_name = name
    return worst, worst_name, per_param
