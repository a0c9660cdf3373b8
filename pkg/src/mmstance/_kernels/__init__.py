"""Hot-kernel backend selection.

The compiled extension is preferred when it imported cleanly; otherwise the
numpy fallback is used. `set_backend` exists for tests and the benchmark
script, not for production configuration.
"""

from . import _fallback

try:
    from . import _native as _compiled
except ImportError:
    _compiled = None

_active = _compiled if _compiled is not None else _fallback


def backend_name():
    return "native" if _active is _compiled else "fallback"


def has_native():
    return _compiled is not None


def set_backend(name):
    """Switch the active backend ("native" or "fallback"). Returns prior name."""
    global _active
    prior = backend_name()
    if name == "native":
        if _compiled is None:
            raise RuntimeError("compiled kernel extension is not available")
        _active = _compiled
    elif name == "fallback":
        _active = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prior


def layer_norm_fwd(x, gamma, beta, eps):
    return _active.layer_norm_fwd(x, gamma, beta, eps)


def layer_norm_bwd(dy, x, gamma, mu, rstd):
    return _active.layer_norm_bwd(dy, x, gamma, mu, rstd)


def softmax_fwd(x):
    return _active.softmax_fwd(x)


def softmax_bwd(dy, y):
    return _active.softmax_bwd(dy, y)


def leaky_relu_fwd(x, alpha):
    return _active.leaky_relu_fwd(x, alpha)


def leaky_relu_bwd(dy, x, alpha):
    return _active.leaky_relu_bwd(dy, x, alpha)


def adam_step(p, g, m, v, step, lr, beta1, beta2, eps):
    return _active.adam_step(p, g, m, v, step, lr, beta1, beta2, eps)
