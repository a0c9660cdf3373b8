"""Vision side: patch embedding, per-target visual prompt bank, prompted encoder.

Images are (H, W, 3) float arrays in [0, 1]. Patches are taken row-major
(top-left to bottom-right) and each patch is flattened in (row, col, channel)
order, so patchify/unpatchify is an exact round trip.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import TransformerLayer, broadcast_rows
from .tensor import Tensor


class PatchShapeError(ValueError):
    pass


class UnknownPromptTargetError(KeyError):
    pass


def patchify(image, patch_size):
    """Split (H, W, 3) into ((H/l)*(W/l), l*l*3) flattened patches."""
    image = np.asarray(image)
    h, w, c = image.shape
    l = patch_size
    if h % l or w % l:
        raise PatchShapeError(f"image {h}x{w} not divisible by patch side {l}")
    gh, gw = h // l, w // l
    tiles = image.reshape(gh, l, gw, l, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, l * l * c))


def unpatchify(patches, height, width, patch_size):
    """Inverse of patchify."""
    l = patch_size
    gh, gw = height // l, width // l
    c = patches.shape[1] // (l * l)
    tiles = patches.reshape(gh, gw, l, l, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(height, width, c))


def patch_count(image_size, patch_size):
    return (image_size // patch_size) ** 2


class PatchEmbedParams:
    """Linear projection of flat patches plus learned 1D position embeddings.

    Position slot 0 belongs to the class token; slots 1..r to the patches.
    """

    def __init__(self, rng, patch_dim, d, n_patches, dtype=np.float32):
        self.d = d
        self.n_patches = n_patches
        self.dtype = dtype
        self.proj = Tensor(rng.truncated_normal((patch_dim, d), dtype=dtype), requires_grad=True)
        self.pos_emb = Tensor(rng.truncated_normal((n_patches + 1, d), dtype=dtype), requires_grad=True)
        self.cls_token = Tensor(rng.truncated_normal((d,), dtype=dtype), requires_grad=True)

    def parameters(self, prefix="patch"):
        return {f"{prefix}.proj": self.proj, f"{prefix}.pos_emb": self.pos_emb,
                f"{prefix}.cls_token": self.cls_token}


def embed_patches(patches, params):
    """patches: (r, p) or (b, r, p) array -> Tensor (b, r, d) with patch
    position embeddings added (class slot is prepended at encode time)."""
    arr = np.asarray(patches, dtype=params.dtype)
    if arr.ndim == 2:
        arr = arr[None, ...]
    b, r, p = arr.shape
    if p != params.proj.shape[0]:
        raise PatchShapeError(f"patch length {p} does not match projection input {params.proj.shape[0]}")
    flat = T.matmul(Tensor(arr.reshape(b * r, p), dtype=params.dtype), params.proj)
    v0 = T.reshape(flat, (b, r, params.d))
    pos = T.reshape(params.pos_emb[1:r + 1], (1, r, params.d))
    return T.add(v0, pos)


INIT_SCHEMES = ("trunc_normal", "uniform_fan")


def _draw_prompt(rng, shape, d, scheme, dtype):
    if scheme == "trunc_normal":
        return rng.truncated_normal(shape, std=0.02, dtype=dtype)
    if scheme == "uniform_fan":
        bound = float(np.sqrt(6.0 / d))
        return rng.uniform(shape, -bound, bound, dtype=dtype)
    raise ValueError(f"init scheme must be one of {INIT_SCHEMES}, got {scheme!r}")


class VisualPromptBank:
    """Per-target learnable prompt rows inserted before the patch sequence.

    shallow: one (lam, d) matrix per target, inserted at layer 1 and carried
    through. deep: (n_layers, lam, d), the prompt slots are replaced with that
    layer's rows before every block. lam = 0 encodes the no-visual-prompt
    ablation. shared=True collapses the bank to a single matrix used for all
    targets (the "generic" zero-shot option).
    """

    def __init__(self, targets, lam, d, depth_mode="shallow", n_layers=None,
                 init_scheme="trunc_normal", rng=None, dtype=np.float32, shared=False):
        if lam < 0:
            raise ValueError("prompt length must be >= 0")
        if depth_mode not in ("shallow", "deep"):
            raise ValueError(f"depth_mode must be shallow or deep, got {depth_mode!r}")
        if depth_mode == "deep" and not n_layers:
            raise ValueError("deep mode needs the encoder layer count")
        self.targets = list(targets)
        self.lam = lam
        self.d = d
        self.depth_mode = depth_mode
        self.n_layers = n_layers
        self.init_scheme = init_scheme
        self.shared = shared
        self.dtype = dtype
        shape = (lam, d) if depth_mode == "shallow" else (n_layers, lam, d)
        self.entries = {}
        if shared:
            one = Tensor(_draw_prompt(rng, shape, d, init_scheme, dtype), requires_grad=True)
            for t in self.targets:
                self.entries[t] = one
        else:
            for i, t in enumerate(self.targets):
                draw = _draw_prompt(rng.child(i), shape, d, init_scheme, dtype)
                self.entries[t] = Tensor(draw, requires_grad=True)

    def prompt_for(self, target):
        try:
            return self.entries[target]
        except KeyError:
            raise UnknownPromptTargetError(
                f"no visual prompt for target {target!r}; bank has: {', '.join(self.targets)}"
            ) from None

    def mean_prompt(self):
        """Average of all trained matrices; the unseen-target fallback."""
        stacked = np.stack([self.entries[t].data for t in self.targets])
        return Tensor(stacked.mean(axis=0).astype(self.dtype), dtype=self.dtype)

    def params_per_target(self):
        return self.lam * self.d if self.depth_mode == "shallow" else self.n_layers * self.lam * self.d

    def parameters(self, prefix="vprompt"):
        if self.shared:
            return {f"{prefix}.shared": self.entries[self.targets[0]]} if self.targets else {}
        return {f"{prefix}.{t}": self.entries[t] for t in self.targets}


class VisionEncoderParams:
    """Pre-norm transformer stack over [cls, prompts, patches]."""

    def __init__(self, rng, d, n_layers, heads, ffn_mult=4, dtype=np.float32):
        self.d = d
        self.heads = heads
        self.n_layers = n_layers
        self.dtype = dtype
        self.layers = [TransformerLayer(rng.child(i), d, heads, ffn_mult, dtype) for i in range(n_layers)]
        self.ln_g = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.ln_b = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def parameters(self, prefix="vis"):
        out = {f"{prefix}.ln_g": self.ln_g, f"{prefix}.ln_b": self.ln_b}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.layer{i}"))
        return out


def build_prompted_sequence(v0, prompts, patch_params):
    """Assemble the layer-1 input [cls, prompt rows, patch rows].

    v0: (b, r, d) Tensor; prompts: (b, lam, d) Tensor (lam may be 0).
    Returns (b, 1 + lam + r, d).
    """
    b = v0.shape[0]
    cls = T.add(patch_params.cls_token, patch_params.pos_emb[0])
    cls_rows = broadcast_rows(T.reshape(cls, (1, patch_params.d)), b, patch_params.dtype)
    return T.concat([cls_rows, prompts, v0], axis=1)


def encode_image_prompted(v0, prompts, params, patch_params, depth_mode="shallow"):
    """Prompted forward pass; returns the final-layer class vector (b, d).

    shallow: prompts is (b, lam, d), inserted once. deep: prompts is a list of
    per-layer (b, lam, d) Tensors; the prompt slots are replaced with layer
    k's rows before block k runs.
    """
    if depth_mode == "deep":
        first, rest = prompts[0], prompts[1:]
    else:
        first, rest = prompts, None
    lam = first.shape[1]
    if lam and first.shape[2] != params.d:
        raise PatchShapeError(f"prompt width {first.shape[2]} does not match encoder width {params.d}")
    x = build_prompted_sequence(v0, first, patch_params)
    for k, layer in enumerate(params.layers):
        if depth_mode == "deep" and k > 0 and lam:
            x = T.concat([x[:, :1], rest[k - 1], x[:, 1 + lam:]], axis=1)
        x = layer(x)
    x = T.layer_norm(x, params.ln_g, params.ln_b)
    return x[:, 0]


def encode_image_plain(v0, params, patch_params):
    """Unprompted forward pass over [cls, patches]; the ablation reference."""
    b = v0.shape[0]
    cls = T.add(patch_params.cls_token, patch_params.pos_emb[0])
    cls_rows = broadcast_rows(T.reshape(cls, (1, patch_params.d)), b, patch_params.dtype)
    x = T.concat([cls_rows, v0], axis=1)
    for layer in params.layers:
        x = layer(x)
    x = T.layer_norm(x, params.ln_g, params.ln_b)
    return x[:, 0]
