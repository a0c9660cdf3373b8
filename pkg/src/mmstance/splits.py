"""Dataset partitioning: in-target ratio splits, zero-shot target holdout,
and median-closest split selection.

Samples sharing an id prefix (the part before '#') always land in the same
split, so multi-image posts cannot leak across splits.
"""

from __future__ import annotations

import copy
import statistics

from .tensor import Rng

IN_TARGET_RATIOS = (0.7, 0.1, 0.2)
SPLIT_ORDER = ("train", "dev", "test")


class SplitError(ValueError):
    pass


class ProbeError(RuntimeError):
    def __init__(self, split_index, cause):
        super().__init__(f"probe failed on split {split_index}: {cause}")
        self.split_index = split_index


def group_key(sample_id):
    return sample_id.split("#", 1)[0]


def largest_remainder(total, ratios):
    """Integer allocation of `total` by `ratios` (largest-remainder rule)."""
    exact = [total * r for r in ratios]
    counts = [int(e) for e in exact]
    short = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _assign_target(samples, ratios, names, rng):
    """Assign one target's samples to splits, keeping id-groups atomic."""
    groups = {}
    for s in samples:
        groups.setdefault(group_key(s.id), []).append(s)
    keys = sorted(groups)
    if len(keys) < len(ratios):
        raise SplitError(f"target {samples[0].target!r} has {len(keys)} id-groups, needs >= {len(ratios)}")
    rng.shuffle(keys)
    quotas = largest_remainder(len(samples), ratios)
    remaining = list(quotas)
    for key in keys:
        best = max(range(len(remaining)), key=lambda i: (remaining[i], -i))
        for s in groups[key]:
            s.split = names[best]
        remaining[best] -= len(groups[key])


def _check_ratios(ratios):
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {tuple(ratios)}")
    if any(r < 0 for r in ratios):
        raise SplitError("ratios must be non-negative")


def split_in_target(manifest, ratios=IN_TARGET_RATIOS, seed=0):
    """Per-target train/dev/test assignment honoring the ratio within one
    sample after largest-remainder rounding (exact when ids are singletons).
    Returns a new manifest; the input is left untouched."""
    _check_ratios(ratios)
    out = copy.deepcopy(manifest)
    rng = Rng(seed)
    for t_idx, target in enumerate(out.targets):
        samples = out.of_target(target)
        if not samples:
            continue
        _assign_target(samples, ratios, SPLIT_ORDER[:len(ratios)], rng.child(t_idx))
    return out.validate()


def split_zero_shot(manifest, held_out_targets, train_dev_ratios=(7 / 8, 1 / 8), seed=0):
    """Held-out targets become the whole test set; the rest gets a
    train/dev split in the in-target style."""
    held = tuple(held_out_targets)
    if not held:
        raise SplitError("held_out_targets is empty")
    unknown = [t for t in held if t not in manifest.targets]
    if unknown:
        raise SplitError(f"held-out targets {unknown} not in manifest targets {list(manifest.targets)}")
    if set(held) == set(manifest.targets):
        raise SplitError("cannot hold out every target")
    _check_ratios(train_dev_ratios)
    out = copy.deepcopy(manifest)
    rng = Rng(seed)
    for t_idx, target in enumerate(out.targets):
        samples = out.of_target(target)
        if not samples:
            continue
        if target in held:
            for s in samples:
                s.split = "test"
        else:
            _assign_target(samples, train_dev_ratios, ("train", "dev"), rng.child(t_idx))
    return out.validate()


def select_median_split(manifest, k=20, probe=None, seed=0, ratios=IN_TARGET_RATIOS):
    """Score k seeded candidate splits with `probe` and return the one whose
    score is closest to the median (ties -> lowest candidate index).

    probe: callable(manifest_with_splits) -> float.
    Returns (chosen_manifest, report) where report lists every candidate's
    seed and score plus the chosen index.
    """
    if k < 1:
        raise SplitError("k must be >= 1")
    if probe is None:
        raise SplitError("a probe callable is required")
    master = Rng(seed)
    candidates = []
    scores = []
    for i in range(k):
        child_seed = master.child(i).seed
        cand = split_in_target(manifest, ratios=ratios, seed=child_seed)
        try:
            score = float(probe(cand))
        except Exception as e:
            raise ProbeError(i, e) from e
        candidates.append((child_seed, cand))
        scores.append(score)
    med = statistics.median(scores)
    best = 0
    for i in range(1, k):
        if abs(scores[i] - med) < abs(scores[best] - med):
            best = i
    report = {"median": med, "chosen_index": best, "chosen_seed": candidates[best][0],
              "scores": scores, "seeds": [s for s, _ in candidates]}
    return candidates[best][1], report
