from collections import Counter
from dataclasses import dataclass

import numpy as np
import pytest

from gav.sampler import (
    HardPoolEmptyError,
    SamplingConfig,
    filter_hard,
    sample_pairs,
    shuffle_words,
)
from gav.textops import hardness


@dataclass
class FakeSample:
    image: str
    positives: list
    negatives: list


SAMPLE = FakeSample(
    image="img/000.pgm",
    positives=["golden star cafe"],
    negatives=["golden star motors", "river house", "golden cafe", "blue lake inn",
               "star cafe", "random words here", "totally unrelated biz"],
)


class TestShuffleWords:
    def test_single_word_is_identity(self):
        rng = np.random.default_rng(0)
        assert shuffle_words("abc", rng) == "abc"

    def test_two_words_balanced(self):
        rng = np.random.default_rng(1)
        counts = Counter(shuffle_words("a b", rng) for _ in range(10_000))
        assert set(counts) == {"a b", "b a"}
        assert abs(counts["a b"] / 10_000 - 0.5) < 0.02

    def test_multiset_preserved(self):
        rng = np.random.default_rng(2)
        for text in ["street view image", "one", "a a b", "x y z w v"]:
            out = shuffle_words(text, rng)
            assert Counter(out.split(" ")) == Counter(text.split(" "))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            shuffle_words("", np.random.default_rng(0))


class TestFilterHard:
    def test_threshold_zero_boundary(self):
        kept = filter_hard(["abc", "xyz"], ["abc"], 0.0)
        assert kept == ["abc"]  # "xyz" has hardness exactly 0, not > 0

    def test_equal_string_retained(self):
        assert filter_hard(["abc"], ["abc"], 0.3) == ["abc"]

    def test_distant_string_removed(self):
        assert filter_hard(["xyz"], ["abc"], 0.3) == []

    def test_order_preserved(self):
        negs = ["star cafe", "golden star motors", "golden cafe"]
        kept = filter_hard(negs, SAMPLE.positives, 0.3)
        assert kept == [n for n in negs if hardness(n, SAMPLE.positives) > 0.3]
        assert kept  # at least one hard negative in this fixture

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(3)
        words = ["ab", "abc", "abcd", "xy", "xyz", "a c", "bbb"]
        for _ in range(50):
            negs = list(rng.choice(words, size=4))
            t1, t2 = sorted(rng.random(2))
            wide = set(filter_hard(negs, ["abc"], t1))
            narrow = set(filter_hard(negs, ["abc"], t2))
            assert narrow <= wide


class TestSamplePairs:
    def test_phase1_counts(self):
        cfg = SamplingConfig(n_pos=1, n_neg=4, shuffle_prob=0.0)
        pairs = sample_pairs(SAMPLE, cfg, 1, np.random.default_rng(4))
        assert len(pairs) == 5
        assert sum(p.label for p in pairs) == 1
        assert pairs[0].candidate == "golden star cafe"

    def test_phase2_all_negatives_hard(self):
        cfg = SamplingConfig(n_pos=1, n_neg=4, shuffle_prob=0.0, hnm_threshold=0.3)
        for seed in range(20):
            pairs = sample_pairs(SAMPLE, cfg, 2, np.random.default_rng(seed))
            for p in pairs:
                if p.label == 0:
                    assert hardness(p.candidate, SAMPLE.positives) > 0.3

    def test_forced_shuffle_keeps_word_multiset(self):
        cfg = SamplingConfig(n_pos=1, n_neg=0, shuffle_prob=1.0)
        sample = FakeSample("x", ["street view image"], [])
        pairs = sample_pairs(sample, cfg, 1, np.random.default_rng(5))
        assert pairs[0].label == 1
        assert Counter(pairs[0].candidate.split(" ")) == Counter(["street", "view", "image"])

    def test_counts_match_config(self):
        cfg = SamplingConfig(n_pos=2, n_neg=3, shuffle_prob=0.5)
        pairs = sample_pairs(SAMPLE, cfg, 1, np.random.default_rng(6))
        labels = Counter(p.label for p in pairs)
        assert labels[1] == 2 and labels[0] == 3

    def test_deterministic_under_seed(self):
        cfg = SamplingConfig()
        a = sample_pairs(SAMPLE, cfg, 1, np.random.default_rng(7))
        b = sample_pairs(SAMPLE, cfg, 1, np.random.default_rng(7))
        assert a == b

    def test_phase2_empty_pool_instructs(self):
        sample = FakeSample("y", ["abcdef"], ["zzzzzz", "yyyyyy"])
        cfg = SamplingConfig(hnm_threshold=0.9)
        with pytest.raises(HardPoolEmptyError, match="regenerate|threshold"):
            sample_pairs(sample, cfg, 2, np.random.default_rng(8))

    def test_small_pool_samples_with_replacement(self):
        sample = FakeSample("z", ["pos"], ["only one"])
        cfg = SamplingConfig(n_neg=4, shuffle_prob=0.0)
        pairs = sample_pairs(sample, cfg, 1, np.random.default_rng(9))
        negs = [p.candidate for p in pairs if p.label == 0]
        assert negs == ["only one"] * 4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplingConfig(n_pos=0)
        with pytest.raises(ValueError):
            SamplingConfig(shuffle_prob=1.5)
        with pytest.raises(ValueError):
            SamplingConfig(hnm_threshold=-0.1)
