"""Run configuration: a flat key = value text format, a typed model config,
and a canonical hash so ablations can be shown to differ in exactly one key.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

# stdlib-only at import time: the CLI parses configs before numpy loads so
# the deterministic flag can still pin the BLAS thread count


class ConfigError(ValueError):
    pass


def parse_config_file(path):
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _parse_bool(s):
    if s.lower() in ("true", "yes", "1", "on"):
        return True
    if s.lower() in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_list(s):
    return tuple(item.strip() for item in s.split(",") if item.strip())


@dataclass(frozen=True)
class ModelConfig:
    # widths and depths (desk-scale defaults; see configs/gradcheck.cfg for
    # the tiny verification geometry)
    d_text: int = 64
    d_vis: int = 64
    d_hidden: int = 64
    text_layers: int = 4
    vis_layers: int = 4
    text_heads: int = 4
    vis_heads: int = 4
    ffn_mult: int = 4
    # text side
    max_len: int = 32
    vocab_min_freq: int = 1
    template_id: int = 5
    textual_prompt_mode: str = "fixed"  # fixed | tuned_soft
    use_textual_prompt: bool = True
    freeze_text_backbone: bool = False
    # vision side
    image_size: int = 32
    patch_size: int = 8
    visual_prompt_len: int = 7
    visual_prompt_depth: str = "shallow"  # shallow | deep
    visual_prompt_init: str = "trunc_normal"  # trunc_normal | uniform_fan
    zero_shot_prompts: str = "mean"  # mean | generic
    # head
    fusion_mode: str = "concat"  # concat | cross_attention
    leaky_alpha: float = 0.01
    labels: tuple = ("favor", "against", "neutral")
    # optimization
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 15
    batch_size: int = 32
    master_seed: int = 0
    n_seeds: int = 5
    precision: str = "float32"  # float32 | float64
    deterministic: bool = True

    @property
    def n_labels(self):
        return len(self.labels)

    @property
    def dtype(self):
        import numpy as np

        return np.float64 if self.precision == "float64" else np.float32

    def validate(self):
        if self.d_text <= 0 or self.d_vis <= 0 or self.d_hidden <= 0:
            raise ConfigError("widths must be positive")
        if self.d_text % self.text_heads or self.d_vis % self.vis_heads:
            raise ConfigError("head counts must divide the encoder widths")
        if self.visual_prompt_len < 0:
            raise ConfigError("visual_prompt_len must be >= 0")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size {self.image_size} not divisible by patch_size {self.patch_size}")
        if self.template_id not in (1, 2, 3, 4, 5):
            raise ConfigError(f"template_id must be 1..5, got {self.template_id}")
        if self.textual_prompt_mode not in ("fixed", "tuned_soft"):
            raise ConfigError(f"bad textual_prompt_mode {self.textual_prompt_mode!r}")
        if self.visual_prompt_depth not in ("shallow", "deep"):
            raise ConfigError(f"bad visual_prompt_depth {self.visual_prompt_depth!r}")
        if self.visual_prompt_init not in ("trunc_normal", "uniform_fan"):
            raise ConfigError(f"bad visual_prompt_init {self.visual_prompt_init!r}")
        if self.fusion_mode not in ("concat", "cross_attention"):
            raise ConfigError(f"bad fusion_mode {self.fusion_mode!r}")
        if self.zero_shot_prompts not in ("mean", "generic"):
            raise ConfigError(f"bad zero_shot_prompts {self.zero_shot_prompts!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"bad precision {self.precision!r}")
        if not self.labels:
            raise ConfigError("label set is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("label set has duplicates")
        if not 0 < self.max_len:
            raise ConfigError("max_len must be positive")
        return self

    def to_mapping(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out[f.name] = str(v)
        return out

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values; unrecognized model keys are ignored so
        one config file can also carry data/experiment keys."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.name == "labels":
                kwargs[f.name] = _parse_list(raw)
            elif f.type == "bool" or isinstance(f.default, bool):
                kwargs[f.name] = _parse_bool(raw)
            elif isinstance(f.default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(f.default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs).validate()

    def with_updates(self, **kwargs):
        return replace(self, **kwargs).validate()


def config_hash(cfg):
    """Stable short digest of a config (ModelConfig or plain mapping)."""
    mapping = cfg.to_mapping() if isinstance(cfg, ModelConfig) else {k: str(v) for k, v in cfg.items()}
    canon = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def mapping_diff(a, b):
    """Keys whose values differ between two mappings (either direction)."""
    keys = set(a) | set(b)
    return sorted(k for k in keys if a.get(k) != b.get(k))
