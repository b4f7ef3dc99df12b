import hashlib
import json
import os

import numpy as np
import pytest

from gav import font5x7 as font
from gav.datagen import (
    DEFAULT_VOCAB,
    Dataset,
    GenConfig,
    ManifestError,
    Sample,
    dataset_stats,
    generate,
    load_manifest,
    make_plan,
    render_plan,
    write_stats_csv,
)
from gav.imageio import load_image
from gav.textops import edit_distance, hardness

from _oracles import edit_distance_recursive

SMALL = GenConfig(n_images=24, seed=3)


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    return generate(SMALL, str(out))


def tree_digest(root):
    h = hashlib.sha256()
    for base, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            with open(os.path.join(base, name), "rb") as f:
                h.update(name.encode() + f.read())
    return h.hexdigest()


class TestFont:
    def test_glyph_shapes(self):
        for ch, bm in font.BITMAPS.items():
            assert bm.shape == (7, 5), ch

    def test_all_glyphs_distinct_and_nonempty(self):
        rendered = {}
        for ch, bm in font.BITMAPS.items():
            if ch == " ":
                assert not bm.any()
                continue
            assert bm.any(), ch
            key = bm.tobytes()
            assert key not in rendered, f"{ch} duplicates {rendered.get(key)}"
            rendered[key] = ch

    def test_charset_coverage(self):
        for ch in "abcdefghijklmnopqrstuvwxyz0123456789 ":
            assert ch in font.BITMAPS


class TestGenerate:
    def test_counts(self, small_ds):
        assert len(small_ds) == 24
        for s in small_ds.samples:
            assert len(s.positives) == 1
            assert len(s.negatives) == 9

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = GenConfig(n_images=10, seed=5)
        generate(cfg, str(tmp_path / "a"))
        generate(cfg, str(tmp_path / "b"))
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_disjoint_candidates(self, small_ds):
        for s in small_ds.samples:
            assert not set(s.positives) & set(s.negatives)

    def test_lengths_bounded(self, small_ds):
        for s in small_ds.samples:
            for c in s.positives + s.negatives:
                assert 1 <= len(c) <= 100

    def test_every_sample_has_hard_negative(self, small_ds):
        for s in small_ds.samples:
            assert any(hardness(n, s.positives) > 0.3 for n in s.negatives)

    def test_images_exist_and_sized(self, small_ds):
        for s in small_ds.samples[:5]:
            img = load_image(small_ds.image_path(s))
            assert img.shape == (SMALL.image_size, SMALL.image_size)
            assert 0.0 <= img.min() and img.max() <= 1.0

    def test_vocabulary_too_small(self, tmp_path):
        cfg = GenConfig(n_images=50, vocabulary=("ab", "cd"), words_per_name=(1, 2))
        with pytest.raises(ValueError, match="vocabulary too small"):
            generate(cfg, str(tmp_path / "tiny"))


class TestRenderOracle:
    def test_positive_text_changes_pixels_in_its_region(self):
        rng = np.random.default_rng(9)
        cfg = GenConfig(n_images=4, seed=9)
        for _ in range(5):
            plan = make_plan("golden star cafe", DEFAULT_VOCAB[:40], cfg, rng)
            with_text = render_plan(plan, draw_positive=True)
            without = render_plan(plan, draw_positive=False)
            diff = np.abs(with_text - without)
            pad = 12
            y0 = max(plan.top - pad, 0)
            x0 = max(plan.left - pad, 0)
            y1 = min(plan.top + plan.block_height + pad, plan.size)
            x1 = min(plan.left + plan.block_width + pad, plan.size)
            region = diff[y0:y1, x0:x1]
            assert region.max() > 0.2
            outside = diff.copy()
            outside[y0:y1, x0:x1] = 0
            assert outside.max() == 0.0

    def test_render_is_pure(self):
        rng = np.random.default_rng(10)
        cfg = GenConfig(n_images=4, seed=10)
        plan = make_plan("blue lake inn", DEFAULT_VOCAB[:30], cfg, rng)
        a = render_plan(plan)
        b = render_plan(plan)
        assert a.tobytes() == b.tobytes()

    def test_distractors_avoid_candidate_words(self, small_ds):
        # distractor words were drawn from outside each candidate list, so no
        # negative candidate appears in the image; spot-check the plan level
        rng = np.random.default_rng(11)
        cfg = GenConfig(n_images=4, seed=11)
        eligible = tuple(w for w in DEFAULT_VOCAB if w not in {"star", "cafe"})
        plan = make_plan("star cafe", eligible, cfg, rng)
        for word, _, _, _ in plan.distractors:
            assert word not in {"star", "cafe"}


class TestManifest:
    def test_roundtrip_unchanged(self, small_ds):
        path = os.path.join(small_ds.directory, "manifest.jsonl")
        with open(path, encoding="utf-8") as f:
            raw_lines = [line.strip() for line in f if line.strip()]
        for raw, sample in zip(raw_lines, small_ds.samples):
            assert sample.to_json() == raw

    def test_error_carries_line_number(self, tmp_path):
        bad = tmp_path / "manifest.jsonl"
        bad.write_text('{"image": "a.pgm", "positives": ["x"], "negatives": []}\nnot json\n')
        with pytest.raises(ManifestError, match=":2"):
            load_manifest(str(bad))

    def test_missing_positives_rejected(self, tmp_path):
        bad = tmp_path / "manifest.jsonl"
        bad.write_text('{"image": "a.pgm", "positives": [], "negatives": ["y"]}\n')
        with pytest.raises(ManifestError, match="positives"):
            load_manifest(str(bad))

    def test_overlap_rejected(self, tmp_path):
        bad = tmp_path / "manifest.jsonl"
        bad.write_text('{"image": "a.pgm", "positives": ["x"], "negatives": ["X"]}\n')
        with pytest.raises(ManifestError, match="overlap"):
            load_manifest(str(bad))

    def test_overlong_candidate_rejected(self, tmp_path):
        bad = tmp_path / "manifest.jsonl"
        row = {"image": "a.pgm", "positives": ["x" * 101], "negatives": []}
        bad.write_text(json.dumps(row) + "\n")
        with pytest.raises(ManifestError, match="101|longer"):
            load_manifest(str(bad))


class TestStats:
    def test_point_mass_candidate_count(self, small_ds):
        stats = dataset_stats(small_ds)
        assert stats["candidates_per_image"] == [(10, 24, 1.0)]

    def test_length_cdf_reaches_one_within_bound(self, small_ds):
        rows = dataset_stats(small_ds)["candidate_length"]
        assert rows[-1][0] <= 100
        assert rows[-1][2] == pytest.approx(1.0)

    def test_edit_distance_matches_bruteforce_subset(self, small_ds):
        rows = dataset_stats(small_ds)["negative_edit_distance"]
        reference = []
        for s in small_ds.samples[:10]:
            for neg in s.negatives:
                reference.append(
                    min(edit_distance_recursive(neg, p) for p in s.positives)
                )
        got = {b: c for b, c, _ in rows}
        sub = dataset_stats(Dataset(small_ds.directory, small_ds.samples[:10]))
        sub_rows = {b: c for b, c, _ in sub["negative_edit_distance"]}
        from collections import Counter

        assert sub_rows == Counter(reference)
        assert sum(got.values()) == 24 * 9

    def test_csv_format(self, small_ds, tmp_path):
        out = tmp_path / "stats.csv"
        write_stats_csv(dataset_stats(small_ds), str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "metric,bin,count,cumulative"
        assert all(len(line.split(",")) == 4 for line in lines[1:])
