"""Evaluation metric (macro F1) and annotation mathematics (Cohen's kappa,
majority vote with escalation)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


def _confusion(preds, golds, label_set):
    if len(preds) != len(golds):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise MetricError("empty inputs")
    idx = {lab: i for i, lab in enumerate(label_set)}
    n = len(label_set)
    mat = np.zeros((n, n), dtype=np.int64)
    for p, g in zip(preds, golds):
        if p not in idx or g not in idx:
            raise MetricError(f"label outside label set {list(label_set)}: {p!r}/{g!r}")
        mat[idx[g], idx[p]] += 1
    return mat


def macro_f1(preds, golds, label_set):
    """Unweighted mean of per-class F1 over the whole label set.

    A class with neither predictions nor golds contributes F1 = 0; zero
    denominators in precision/recall also count as 0.
    """
    mat = _confusion(preds, golds, label_set)
    n = len(label_set)
    f1s = []
    for i in range(n):
        tp = mat[i, i]
        fp = mat[:, i].sum() - tp
        fn = mat[i, :].sum() - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def cohen_kappa(a, b, label_set):
    """Chance-corrected agreement between two annotators.

    kappa = (p_o - p_e) / (1 - p_e) with the marginal-product p_e; when both
    annotators are constant and identical (p_e = 1) kappa is defined as 1.
    """
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise MetricError("empty inputs")
    idx = {lab: i for i, lab in enumerate(label_set)}
    for lab in list(a) + list(b):
        if lab not in idx:
            raise MetricError(f"label {lab!r} outside label set {list(label_set)}")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    p_e = 0.0
    for lab in label_set:
        p_e += (sum(x == lab for x in a) / n) * (sum(y == lab for y in b) / n)
    if abs(1.0 - p_e) < 1e-15:
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


class _VoteSentinel:
    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name


NEEDS_ESCALATION = _VoteSentinel("NeedsEscalation")
DISCARD = _VoteSentinel("Discard")


@dataclass
class AnnotationRecord:
    sample_id: str
    primary_votes: list
    extra_votes: list = None

    def validate(self, label_set=None):
        if len(self.primary_votes) != 3:
            raise MetricError(f"record {self.sample_id!r}: need exactly 3 primary votes")
        if self.extra_votes is not None and len(self.extra_votes) != 3:
            raise MetricError(f"record {self.sample_id!r}: extra votes must be exactly 3 when present")
        if label_set is not None:
            for v in self.primary_votes + (self.extra_votes or []):
                if v not in label_set:
                    raise MetricError(f"record {self.sample_id!r}: vote {v!r} outside label set {list(label_set)}")
        return self


def majority_vote(record):
    """Gold-label aggregation: 2-of-3 wins; a three-way disagreement
    escalates; with escalation votes present, strict plurality over all six
    decides, and a tie discards the record."""
    record.validate()
    counts = {}
    for v in record.primary_votes:
        counts[v] = counts.get(v, 0) + 1
    top = max(counts.values())
    if top >= 2:
        return max(counts, key=lambda lab: counts[lab])
    if record.extra_votes is None:
        return NEEDS_ESCALATION
    pooled = {}
    for v in record.primary_votes + record.extra_votes:
        pooled[v] = pooled.get(v, 0) + 1
    best = max(pooled.values())
    winners = [lab for lab, c in pooled.items() if c == best]
    if len(winners) == 1:
        return winners[0]
    return DISCARD


def load_annotations(path, label_set=None):
    """Read annotation records from the same JSONL container style as
    manifests: a {"kind": "annotations", "labels": [...]} header, then one
    record per line with fields id, primary_votes, optional extra_votes."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MetricError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise MetricError(f"{path}:1: malformed header: {e.msg}") from None
    if header.get("kind") != "annotations":
        raise MetricError(f"{path}:1: header kind must be 'annotations'")
    labels = tuple(header.get("labels", label_set or ()))
    records = []
    for lineno, raw in enumerate(lines[1:], 2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as e:
            raise MetricError(f"{path}:{lineno}: malformed record: {e.msg}") from None
        records.append(AnnotationRecord(
            sample_id=rec["id"], primary_votes=list(rec["primary_votes"]),
            extra_votes=list(rec["extra_votes"]) if "extra_votes" in rec else None,
        ).validate(labels or None))
    return labels, records
