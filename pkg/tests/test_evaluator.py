import dataclasses

import numpy as np
import pytest

from gav.evaluator import (
    PrCurve,
    ScoredCandidate,
    balanced_accuracy,
    ensemble_max,
    image_search,
    margin_report,
    max_length_sweep,
    pr_curve,
    probe_masked,
    probe_shuffle,
    read_scores_csv,
    roc_auc,
    score_dataset,
    write_scores_csv,
)

from _oracles import pr_points_bruteforce


def sc(score, label, image="img", candidate="cand"):
    return ScoredCandidate(image=image, candidate=candidate, score=score, label=label)


class TestPrCurve:
    def test_hand_example(self):
        rows = [sc(0.9, 1), sc(0.8, 0), sc(0.7, 1)]
        curve = pr_curve(rows)
        assert [round(t, 4) for t, _, _ in curve.points] == [0.9, 0.8, 0.7]
        # a generic threshold of 0.85 behaves like the 0.9 row
        (th, p, r) = curve.points[0]
        assert (p, r) == (1.0, 0.5)
        brute = pr_points_bruteforce([r.score for r in rows], [r.label for r in rows], [0.85])
        assert brute[0][1:] == (1.0, 0.5)

    def test_perfect_separation_auc(self):
        rows = [sc(0.9, 1), sc(0.8, 1), sc(0.2, 0), sc(0.1, 0)]
        assert pr_curve(rows).auc == 1.0

    def test_all_tied_degenerate(self):
        rows = [sc(0.5, 1), sc(0.5, 0), sc(0.5, 0), sc(0.5, 0)]
        curve = pr_curve(rows)
        assert len(curve.points) == 1
        th, p, r = curve.points[0]
        assert (p, r) == (0.25, 1.0)
        assert curve.auc == 0.25

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            pr_curve([sc(0.5, 0)])

    def test_matches_bruteforce_random(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 50))
            scores = rng.choice([0.1, 0.25, 0.5, 0.8, 0.9], size=n)
            labels = rng.integers(0, 2, size=n)
            if labels.sum() == 0:
                labels[0] = 1
            rows = [sc(float(s), int(y)) for s, y in zip(scores, labels)]
            curve = pr_curve(rows)
            ths = [t for t, _, _ in curve.points]
            assert ths == sorted(set(ths), reverse=True)
            brute = pr_points_bruteforce(
                [r.score for r in rows], [r.label for r in rows], ths
            )
            for (t1, p1, r1), (t2, p2, r2) in zip(curve.points, brute):
                assert p1 == pytest.approx(p2) and r1 == pytest.approx(r2)
            recalls = [r for _, _, r in curve.points]
            assert all(b >= a for a, b in zip(recalls, recalls[1:]))
            assert all(0 <= p <= 1 for _, p, _ in curve.points)

    def test_csv(self, tmp_path):
        curve = pr_curve([sc(0.9, 1), sc(0.1, 0)])
        path = tmp_path / "pr.csv"
        curve.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "threshold,precision,recall"
        assert len(lines) == 3


class TestScoreDataset:
    def test_counts_and_zero_weight_scores(self, mini_eval_ds, zero_ckpt):
        rows = score_dataset(mini_eval_ds, zero_ckpt)
        assert len(rows) == len(mini_eval_ds.samples) * 5
        assert all(r.score == pytest.approx(0.5) for r in rows)

    def test_deterministic(self, mini_eval_ds, rand_ckpt):
        a = score_dataset(mini_eval_ds, rand_ckpt)
        b = score_dataset(mini_eval_ds, rand_ckpt)
        assert a == b

    def test_order_invariance(self, mini_eval_ds, rand_ckpt):
        rows = {(r.image, r.candidate): r.score for r in score_dataset(mini_eval_ds, rand_ckpt)}
        flipped = dataclasses.replace(
            mini_eval_ds, samples=list(reversed(mini_eval_ds.samples))
        )
        rows_flipped = {
            (r.image, r.candidate): r.score for r in score_dataset(flipped, rand_ckpt)
        }
        assert rows == rows_flipped

    def test_charset_mismatch_rejected(self, mini_eval_ds, rand_ckpt):
        broken = dataclasses.replace(rand_ckpt)
        broken.params = dict(rand_ckpt.params)
        broken.params["embed"] = rand_ckpt.params["embed"][:-1]
        with pytest.raises(ValueError, match="charset"):
            score_dataset(mini_eval_ds, broken)

    def test_hardness_filter_drops_easy_negatives(self, mini_eval_ds, zero_ckpt):
        full = score_dataset(mini_eval_ds, zero_ckpt)
        filtered = score_dataset(mini_eval_ds, zero_ckpt, hardness_filter=0.3)
        assert len(filtered) <= len(full)
        assert sum(r.label for r in filtered) == sum(r.label for r in full)


class TestSweep:
    def test_long_length_matches_untruncated(self, mini_eval_ds, rand_ckpt):
        base = {(r.image, r.candidate): r.score for r in score_dataset(mini_eval_ds, rand_ckpt, max_len=100)}
        swept = max_length_sweep(mini_eval_ds, rand_ckpt, [100, 150])
        assert swept[100].points == swept[150].points

    def test_short_candidates_unaffected(self, mini_eval_ds, rand_ckpt):
        full = {(r.image, r.candidate): r.score for r in score_dataset(mini_eval_ds, rand_ckpt, max_len=100)}
        short = {(r.image, r.candidate): r.score for r in score_dataset(mini_eval_ds, rand_ckpt, max_len=3)}
        for key, score in short.items():
            if len(key[1]) <= 3:
                assert score == full[key]

    def test_positive_lengths_required(self, mini_eval_ds, rand_ckpt):
        with pytest.raises(ValueError):
            max_length_sweep(mini_eval_ds, rand_ckpt, [0])


class TestMargins:
    def test_identical_checkpoints_zero_delta(self, mini_eval_ds, rand_ckpt):
        report = margin_report(mini_eval_ds, rand_ckpt, rand_ckpt)
        assert report["mean_delta"] == 0.0

    def test_margins_bounded(self, mini_eval_ds, rand_ckpt, zero_ckpt):
        report = margin_report(mini_eval_ds, rand_ckpt, zero_ckpt)
        for m in report["margin_a"] + report["margin_b"]:
            assert -1.0 <= m <= 1.0


class TestProbes:
    def test_shuffle_zero_weight_delta_zero(self, mini_eval_ds, zero_ckpt):
        report = probe_shuffle(mini_eval_ds, zero_ckpt, trials=3)
        assert report["mean_abs_delta"] == 0.0

    def test_shuffle_single_word_identity(self, mini_eval_ds, rand_ckpt):
        singles = [
            s for s in mini_eval_ds.samples if all(" " not in p for p in s.positives)
        ]
        if not singles:
            pytest.skip("no single-word positives in fixture")
        ds = dataclasses.replace(mini_eval_ds, samples=singles)
        report = probe_shuffle(ds, rand_ckpt, trials=4)
        assert report["mean_abs_delta"] == 0.0

    def test_masked_zero_weight_auc_half(self, mini_eval_ds, zero_ckpt):
        report = probe_masked(mini_eval_ds, zero_ckpt)
        assert report["auc"] == pytest.approx(0.5)

    def test_masked_deterministic(self, mini_eval_ds, rand_ckpt):
        a = probe_masked(mini_eval_ds, rand_ckpt, seed=1)
        b = probe_masked(mini_eval_ds, rand_ckpt, seed=1)
        assert a == b


class TestEnsemble:
    def test_elementwise_max(self):
        a = [sc(0.3, 1), sc(0.9, 0)]
        b = [sc(0.7, 1), sc(0.1, 0)]
        out = ensemble_max(a, b)
        assert [r.score for r in out] == [0.7, 0.9]

    def test_commutative_idempotent(self):
        a = [sc(0.3, 1), sc(0.9, 0)]
        b = [sc(0.7, 1), sc(0.1, 0)]
        assert ensemble_max(a, b) == ensemble_max(b, a)
        assert ensemble_max(a, a) == a

    def test_misalignment_rejected(self):
        a = [sc(0.3, 1, candidate="x")]
        b = [sc(0.7, 1, candidate="y")]
        with pytest.raises(ValueError, match="misaligned"):
            ensemble_max(a, b)
        with pytest.raises(ValueError, match="length"):
            ensemble_max(a, a + a)


class TestImageSearch:
    def test_threshold_above_one_empty(self, mini_eval_ds, rand_ckpt):
        assert image_search("anything", mini_eval_ds, rand_ckpt, threshold=1.01) == []

    def test_threshold_zero_returns_all_sorted(self, mini_eval_ds, rand_ckpt):
        out = image_search("star", mini_eval_ds, rand_ckpt, threshold=0.0)
        assert len(out) == len(mini_eval_ds.samples)
        scores = [s for s, _ in out]
        assert scores == sorted(scores, reverse=True)

    def test_empty_query_rejected(self, mini_eval_ds, rand_ckpt):
        with pytest.raises(ValueError):
            image_search("  ", mini_eval_ds, rand_ckpt)


class TestHelpers:
    def test_balanced_accuracy(self):
        rows = [sc(0.9, 1), sc(0.4, 1), sc(0.2, 0), sc(0.8, 0)]
        assert balanced_accuracy(rows) == pytest.approx(0.5)

    def test_roc_auc_ties(self):
        rows = [sc(0.5, 1), sc(0.5, 0)]
        assert roc_auc(rows) == pytest.approx(0.5)
        rows = [sc(0.9, 1), sc(0.1, 0)]
        assert roc_auc(rows) == pytest.approx(1.0)

    def test_scores_csv_roundtrip(self, tmp_path):
        rows = [sc(0.25, 1, image="a.pgm", candidate="x y"), sc(0.75, 0, image="b.pgm")]
        path = tmp_path / "scores.csv"
        write_scores_csv(rows, path)
        back = read_scores_csv(path)
        assert back == rows
