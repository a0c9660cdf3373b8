"""Dataset schema and line-delimited manifest container.

File layout: UTF-8 JSON Lines. The first line is a header object
{"kind": "manifest", "name", "labels", "targets", "provenance"}; every
following line is one sample object with fields id, target, text,
image_path, label and optional cot_text, split. JSON handles all escaping,
so round trips are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SPLITS = ("train", "dev", "test")


class ManifestError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    target: str
    text: str
    image_path: str
    label: str
    cot_text: str | None = None
    split: str | None = None

    def to_record(self):
        rec = {"id": self.id, "target": self.target, "text": self.text,
               "image_path": self.image_path, "label": self.label}
        if self.cot_text is not None:
            rec["cot_text"] = self.cot_text
        if self.split is not None:
            rec["split"] = self.split
        return rec


@dataclass
class DatasetManifest:
    name: str
    labels: tuple
    targets: tuple
    samples: list = field(default_factory=list)
    provenance: str = ""

    def validate(self):
        if len(set(self.labels)) != len(self.labels):
            raise ManifestError("duplicate labels in label set")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise ManifestError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if s.target not in self.targets:
                raise ManifestError(f"sample {s.id!r}: target {s.target!r} not in target list {list(self.targets)}")
            if s.label not in self.labels:
                raise ManifestError(f"sample {s.id!r}: label {s.label!r} not in label set {list(self.labels)}")
            if s.split is not None and s.split not in SPLITS:
                raise ManifestError(f"sample {s.id!r}: split {s.split!r} not one of {SPLITS}")
        return self

    def of_target(self, target):
        return [s for s in self.samples if s.target == target]

    def of_split(self, split):
        return [s for s in self.samples if s.split == split]

    def label_index(self):
        return {lab: i for i, lab in enumerate(self.labels)}


def write_manifest(manifest, path):
    manifest.validate()
    with open(path, "w", encoding="utf-8") as fh:
        header = {"kind": "manifest", "name": manifest.name, "labels": list(manifest.labels),
                  "targets": list(manifest.targets), "provenance": manifest.provenance}
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
        for s in manifest.samples:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def _parse_line(path, lineno, raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}:{lineno}: malformed record: {e.msg}") from None


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty file, expected a header line")
    header = _parse_line(path, 1, lines[0])
    if header.get("kind") != "manifest":
        raise ManifestError(f"{path}:1: header kind must be 'manifest'")
    labels = tuple(header["labels"])
    manifest = DatasetManifest(name=header.get("name", ""), labels=labels,
                               targets=tuple(header["targets"]),
                               provenance=header.get("provenance", ""))
    for lineno, raw in enumerate(lines[1:], 2):
        if not raw.strip():
            continue
        rec = _parse_line(path, lineno, raw)
        missing = [k for k in ("id", "target", "text", "image_path", "label") if k not in rec]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        if rec["label"] not in labels:
            raise ManifestError(f"{path}:{lineno}: label {rec['label']!r} not in label set {list(labels)}")
        manifest.samples.append(Sample(
            id=rec["id"], target=rec["target"], text=rec["text"],
            image_path=rec["image_path"], label=rec["label"],
            cot_text=rec.get("cot_text"), split=rec.get("split"),
        ))
    return manifest.validate()
