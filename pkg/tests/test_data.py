import json
import os

import numpy as np
import pytest

from mmstance.images import ImageFormatError, load_ppm, write_ppm
from mmstance.manifest import DatasetManifest, ManifestError, Sample, load_manifest, write_manifest
from mmstance.synthetic import (
    SyntheticConfig,
    cue_to_label,
    generate_synthetic,
    glyph_region,
    label_palette,
    label_to_cue,
)


def _sample(n=3, **kw):
    defaults = dict(target="a", text="hi", image_path="img.ppm", label="favor")
    return [Sample(id=f"s{i}", **{**defaults, **kw}) for i in range(n)]


class TestManifest:
    def test_empty_manifest_is_valid(self, tmp_path):
        m = DatasetManifest("empty", ("favor", "against"), ("a",))
        path = tmp_path / "m.jsonl"
        write_manifest(m, path)
        loaded = load_manifest(path)
        assert loaded.samples == [] and loaded.labels == ("favor", "against")

    def test_label_outside_scheme_rejected(self):
        m = DatasetManifest("x", ("favor",), ("a",), _sample(1, label="nope"))
        with pytest.raises(ManifestError, match=r"'nope'.*favor"):
            m.validate()

    def test_roundtrip_identity(self, tmp_path):
        samples = [
            Sample(id="t1#0", target="a", text="hello \"world\"\nline", image_path="i/0.ppm",
                   label="favor", cot_text="because", split="train"),
            Sample(id="t1#1", target="b", text="unicode é中", image_path="i/1.ppm",
                   label="against"),
        ]
        m = DatasetManifest("rt", ("favor", "against"), ("a", "b"), samples, provenance="unit test")
        path = tmp_path / "m.jsonl"
        write_manifest(m, path)
        loaded = load_manifest(path)
        assert loaded.name == m.name and loaded.labels == m.labels and loaded.targets == m.targets
        assert loaded.provenance == m.provenance
        assert [s.__dict__ for s in loaded.samples] == [s.__dict__ for s in samples]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        header = json.dumps({"kind": "manifest", "name": "x", "labels": ["favor"], "targets": ["a"]})
        path.write_text(header + "\n{not json\n")
        with pytest.raises(ManifestError, match=":2"):
            load_manifest(path)

    def test_unknown_label_on_load_names_label_set(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        header = json.dumps({"kind": "manifest", "name": "x", "labels": ["favor"], "targets": ["a"]})
        rec = json.dumps({"id": "s", "target": "a", "text": "t", "image_path": "p", "label": "oops"})
        path.write_text(header + "\n" + rec + "\n")
        with pytest.raises(ManifestError, match=r"'oops'.*favor"):
            load_manifest(path)

    def test_duplicate_ids_rejected(self):
        samples = _sample(2)
        samples[1].id = samples[0].id
        with pytest.raises(ManifestError, match="duplicate"):
            DatasetManifest("x", ("favor",), ("a",), samples).validate()


class TestPpm:
    def test_single_white_pixel(self, tmp_path):
        path = tmp_path / "w.ppm"
        write_ppm(path, np.ones((1, 1, 3)))
        img = load_ppm(path)
        assert img.shape == (1, 1, 3)
        assert np.array_equal(img, np.ones((1, 1, 3), dtype=np.float32))

    def test_2x2_shape(self, tmp_path):
        path = tmp_path / "q.ppm"
        write_ppm(path, np.zeros((2, 2, 3)))
        assert load_ppm(path).shape == (2, 2, 3)

    def test_write_read_roundtrip_within_one_level(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((8, 6, 3))
        path = tmp_path / "r.ppm"
        write_ppm(path, img)
        assert np.abs(load_ppm(path) - img).max() <= 1.0 / 255.0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        with pytest.raises(ImageFormatError, match="magic"):
            load_ppm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n2 2\n255\n\x00\x00")
        with pytest.raises(ImageFormatError, match="truncated"):
            load_ppm(path)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n1 1\n255\n\xff\x00\x7f")
        img = load_ppm(path)
        assert img.shape == (1, 1, 3)


class TestSynthetic:
    def _cfg(self, **kw):
        base = dict(targets=("a", "b"), samples_per_target=50, visual_cue_fraction=0.5, seed=3)
        base.update(kw)
        return SyntheticConfig(**base)

    def _text_cue(self, cfg, text):
        toks = set(text.split())
        hits = [i for i, w in enumerate(cfg.cue_words[:len(cfg.labels)]) if w in toks]
        return hits[0] if hits else None

    def _image_cue(self, cfg, img):
        lo, hi = glyph_region(cfg.image_size)
        center = img[(lo + hi) // 2, (lo + hi) // 2]
        palette = np.array(label_palette(len(cfg.labels)))
        dists = np.abs(palette - center).sum(axis=1)
        return int(np.argmin(dists)) if dists.min() < 0.2 else None

    def test_pi_zero_label_recoverable_from_text(self, tmp_path):
        cfg = self._cfg(visual_cue_fraction=0.0, contradiction=True)
        manifest = generate_synthetic(cfg, tmp_path)
        for s in manifest.samples:
            cue = self._text_cue(cfg, s.text)
            assert cue is not None
            assert cfg.labels[cue_to_label(cfg, s.target, cue)] == s.label

    def test_pi_one_no_text_cues(self, tmp_path):
        cfg = self._cfg(visual_cue_fraction=1.0)
        manifest = generate_synthetic(cfg, tmp_path)
        for s in manifest.samples:
            assert self._text_cue(cfg, s.text) is None

    def test_image_cue_pixel_lookup_oracle(self, tmp_path):
        cfg = self._cfg(visual_cue_fraction=1.0, contradiction=True)
        manifest = generate_synthetic(cfg, tmp_path)
        for s in manifest.samples:
            img = load_ppm(os.path.join(tmp_path, s.image_path))
            cue = self._image_cue(cfg, img)
            assert cue is not None
            assert cfg.labels[cue_to_label(cfg, s.target, cue)] == s.label

    def test_binomial_band_for_visual_fraction(self, tmp_path):
        cfg = self._cfg(targets=("a",), samples_per_target=1000, visual_cue_fraction=0.5, seed=11)
        manifest = generate_synthetic(cfg, tmp_path)
        image_cued = sum(1 for s in manifest.samples if self._text_cue(cfg, s.text) is None)
        # 3 sigma band around 500 for Binomial(1000, 0.5)
        assert abs(image_cued - 500) <= 3 * np.sqrt(1000 * 0.25) + 1e-9

    def test_deterministic_bytes_per_seed(self, tmp_path):
        cfg = self._cfg(samples_per_target=10)
        m1 = generate_synthetic(cfg, tmp_path / "one")
        m2 = generate_synthetic(cfg, tmp_path / "two")
        assert [s.__dict__ for s in m1.samples] == [s.__dict__ for s in m2.samples]
        for s in m1.samples:
            b1 = (tmp_path / "one" / s.image_path).read_bytes()
            b2 = (tmp_path / "two" / s.image_path).read_bytes()
            assert b1 == b2

    def test_label_distribution_within_multinomial_band(self, tmp_path):
        dist = (0.6, 0.3, 0.1)
        cfg = self._cfg(targets=("a",), samples_per_target=2000,
                        label_dist={"a": dist}, seed=5)
        manifest = generate_synthetic(cfg, tmp_path)
        for lab, p in zip(cfg.labels, dist):
            n = sum(1 for s in manifest.samples if s.label == lab)
            sigma = np.sqrt(2000 * p * (1 - p))
            assert abs(n - 2000 * p) <= 3 * sigma

    def test_contradiction_permutation_is_derangement(self):
        cfg = self._cfg(contradiction=True)
        n = len(cfg.labels)
        for cue in range(n):
            assert cue_to_label(cfg, "a", cue) == cue  # even index: identity
            assert cue_to_label(cfg, "b", cue) != cue  # odd index: shifted
        for label in range(n):
            assert cue_to_label(cfg, "b", label_to_cue(cfg, "b", label)) == label

    def test_invalid_fraction_rejected(self):
        with pytest.raises(ValueError):
            self._cfg(visual_cue_fraction=1.5).validate()

    def test_palette_colors_distinct(self):
        for n in (2, 3, 4, 6):
            colors = label_palette(n)
            assert len({tuple(np.round(c, 6)) for c in colors}) == n
