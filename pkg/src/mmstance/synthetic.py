"""Synthetic multi-modal stance data.

Every sample carries exactly one stance cue: a target-agnostic cue word in
the text (probability 1 - visual_cue_fraction) or a solid-color glyph block
in the image (probability visual_cue_fraction). The glyph palette has one
color per label-class; a center-pixel lookup suffices to read it back.

With the contradiction flag on, the cue class maps to the label through a
per-target permutation: identity for even-indexed targets, a cyclic shift
for odd-indexed ones. A shift is a derangement, so no class is predictable
from the cue alone and per-sample chance on a two-target set is 0.5; any
model has to condition on the target to do better. Texts and image
backgrounds deliberately never mention or encode the target, so target
identity can only enter through the prompts.

The glyph sits at one fixed position for all targets. Encoding the target
in the glyph position would let a promptless model read the target off the
image and beat the intended floor.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .images import write_ppm
from .manifest import DatasetManifest, Sample
from .tensor import Rng

DEFAULT_CUE_WORDS = ("hooray", "dreadful", "meh", "peculiar", "lukewarm", "shrug")
DEFAULT_FILLERS = (
    "the", "a", "to", "and", "of", "day", "today", "people", "news", "photo",
    "look", "at", "this", "just", "really", "big", "new", "online", "post", "see",
)


@dataclass
class SyntheticConfig:
    targets: tuple
    samples_per_target: int
    labels: tuple = ("favor", "against", "neutral")
    label_dist: dict = None  # target -> tuple of probs; None = uniform everywhere
    visual_cue_fraction: float = 0.5
    contradiction: bool = False
    image_size: int = 32
    cue_words: tuple = DEFAULT_CUE_WORDS
    filler_words: tuple = DEFAULT_FILLERS
    text_len: tuple = (6, 12)
    seed: int = 0

    def validate(self):
        if not self.targets:
            raise ValueError("need at least one target")
        if not 0.0 <= self.visual_cue_fraction <= 1.0:
            raise ValueError(f"visual_cue_fraction must be in [0, 1], got {self.visual_cue_fraction}")
        if len(self.cue_words) < len(self.labels):
            raise ValueError("need one cue word per label class")
        if len(set(self.cue_words[:len(self.labels)]) & set(self.filler_words)):
            raise ValueError("cue words must not collide with filler words")
        for t, dist in (self.label_dist or {}).items():
            if len(dist) != len(self.labels):
                raise ValueError(f"label_dist[{t!r}] has {len(dist)} entries for {len(self.labels)} labels")
            if abs(sum(dist) - 1.0) > 1e-9:
                raise ValueError(f"label_dist[{t!r}] must sum to 1")
        return self


def label_palette(n):
    """n well-separated RGB colors (evenly spaced hues, full saturation)."""
    colors = []
    for i in range(n):
        h = 6.0 * i / n
        k = int(h) % 6
        f = h - int(h)
        p, q, t = 0.0, 1.0 - f, f
        rgb = [(1, t, p), (q, 1, p), (p, 1, t), (p, q, 1), (t, p, 1), (1, p, q)][k]
        colors.append(tuple(float(c) for c in rgb))
    return colors


def cue_to_label(config, target, cue_class):
    """Per-target cue-class -> label-index mapping (the contradiction rule)."""
    n = len(config.labels)
    if config.contradiction and config.targets.index(target) % 2 == 1:
        return (cue_class + 1) % n
    return cue_class


def label_to_cue(config, target, label_idx):
    n = len(config.labels)
    if config.contradiction and config.targets.index(target) % 2 == 1:
        return (label_idx - 1) % n
    return label_idx


def glyph_region(image_size):
    """Fixed block position shared by all targets: the centered quadrant."""
    a = image_size // 4
    return a, a + image_size // 2


def render_image(rng, config, cue_class=None):
    """Noise background; a solid palette block when cue_class is given."""
    size = config.image_size
    img = rng.uniform((size, size, 3), 0.35, 0.65, dtype=np.float64)
    if cue_class is not None:
        lo, hi = glyph_region(size)
        img[lo:hi, lo:hi, :] = label_palette(len(config.labels))[cue_class]
    return img


def render_text(rng, config, cue_class=None):
    """Filler words, with the cue word spliced in at a random position."""
    lo, hi = config.text_len
    k = int(rng.integers(lo, hi + 1))
    words = [config.filler_words[int(i)] for i in rng.integers(0, len(config.filler_words), size=k)]
    if cue_class is not None:
        words.insert(int(rng.integers(0, k + 1)), config.cue_words[cue_class])
    return " ".join(words)


def generate_synthetic(config, out_dir):
    """Write PPM images under out_dir/images and return the manifest.

    Deterministic per seed: same config + seed means identical manifests and
    identical image bytes. image_path fields are relative to out_dir.
    """
    config.validate()
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rng = Rng(config.seed)
    n_labels = len(config.labels)
    samples = []
    for t_idx, target in enumerate(config.targets):
        trng = rng.child(t_idx)
        dist = (config.label_dist or {}).get(target)
        probs = np.asarray(dist, dtype=np.float64) if dist else np.full(n_labels, 1.0 / n_labels)
        for i in range(config.samples_per_target):
            label_idx = int(np.searchsorted(np.cumsum(probs), trng.random(), side="right"))
            label_idx = min(label_idx, n_labels - 1)
            cue = label_to_cue(config, target, label_idx)
            image_cued = trng.random() < config.visual_cue_fraction
            text = render_text(trng, config, cue_class=None if image_cued else cue)
            image = render_image(trng, config, cue_class=cue if image_cued else None)
            sid = f"{target}-{i:05d}"
            rel = os.path.join("images", f"{sid}.ppm")
            write_ppm(os.path.join(out_dir, rel), image)
            samples.append(Sample(id=sid, target=target, text=text,
                                  image_path=rel, label=config.labels[label_idx]))
    manifest = DatasetManifest(
        name="synthetic", labels=tuple(config.labels), targets=tuple(config.targets),
        samples=samples,
        provenance=f"synthetic generator seed={config.seed} pi_v={config.visual_cue_fraction} "
                   f"contradiction={config.contradiction}",
    )
    return manifest.validate()
