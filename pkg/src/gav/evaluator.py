"""Evaluation: per-candidate PR curves, probes, margins, ensembling, and
text-query image search.

Every (image, candidate) pair is an independent binary classification
instance. Ties in scores share one threshold point, so curves are
deterministic functions of the score multiset.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import decoder as D
from .encoder import encode_image, resize_pad
from .imageio import load_image
from .sampler import filter_hard, shuffle_words
from .textops import Charset, encode


@dataclass(frozen=True)
class ScoredCandidate:
    image: str
    candidate: str
    score: float
    label: int


@dataclass(frozen=True)
class PrCurve:
    points: tuple   # (threshold, precision, recall), thresholds descending
    auc: float      # area via step (right-continuous) interpolation

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("threshold,precision,recall\n")
            for th, p, r in self.points:
                f.write(f"{th:.8g},{p:.8g},{r:.8g}\n")


def _check_checkpoint(ckpt):
    charset = ckpt.charset()
    rows = ckpt.params["embed"].shape[0]
    if rows != charset.size:
        raise ValueError(
            f"checkpoint charset mismatch: embedding has {rows} rows but the "
            f"config charset needs {charset.size}"
        )
    return charset


def _subbatch_fn(ckpt):
    if ckpt.config.model == "guided":
        return D.score_subbatch
    return D.score_no_attention_subbatch


def _prepared_image(raw, ckpt, rng):
    size = ckpt.config.encoder.input_size
    if raw.shape != (size, size):
        return resize_pad(raw, size, rng)
    return raw


def score_dataset(dataset, ckpt, max_len=None, hardness_filter=None, _images=None):
    """Score every candidate of every image; one row per pair.

    `hardness_filter`, when set, drops negatives with hardness <= the given
    threshold before scoring (the mining phase filters its evaluation pairs
    the same way). `_images` overrides image loading (the masked probe).
    """
    charset = _check_checkpoint(ckpt)
    max_len = max_len if max_len is not None else ckpt.config.max_len
    params = ckpt.tensors()
    subbatch = _subbatch_fn(ckpt)
    rng = np.random.default_rng(ckpt.config.seed)
    rows = []
    for idx, sample in enumerate(dataset.samples):
        negatives = sample.negatives
        if hardness_filter is not None:
            negatives = tuple(filter_hard(negatives, sample.positives, hardness_filter))
        candidates = list(sample.positives) + list(negatives)
        labels = [1] * len(sample.positives) + [0] * len(negatives)
        if _images is not None:
            image = _images(idx, sample)
        else:
            image = _prepared_image(load_image(dataset.image_path(sample)), ckpt, rng)
        encoded = [encode(c, charset, max_len) for c in candidates]
        scores = subbatch(image, encoded, params, ckpt.config.encoder)
        rows.extend(
            ScoredCandidate(sample.image, cand, s.p_valid, label)
            for cand, s, label in zip(candidates, scores, labels)
        )
    return rows


def pr_curve(scored):
    """Precision/recall at every distinct score, descending, plus AUC."""
    n_pos = sum(r.label for r in scored)
    if n_pos == 0:
        raise ValueError("pr_curve needs at least one positive pair")
    by_score = sorted(scored, key=lambda r: -r.score)
    points = []
    tp = fp = 0
    auc = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(by_score):
        j = i
        while j < len(by_score) and by_score[j].score == by_score[i].score:
            tp += by_score[j].label
            fp += 1 - by_score[j].label
            j += 1
        precision = tp / (tp + fp)
        recall = tp / n_pos
        points.append((by_score[i].score, precision, recall))
        auc += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return PrCurve(points=tuple(points), auc=round(auc, 4))


def balanced_accuracy(scored, threshold=0.5):
    pos = [r.score for r in scored if r.label == 1]
    neg = [r.score for r in scored if r.label == 0]
    tpr = sum(s > threshold for s in pos) / len(pos) if pos else 0.0
    tnr = sum(s <= threshold for s in neg) / len(neg) if neg else 0.0
    return (tpr + tnr) / 2


def roc_auc(scored):
    """Rank-based ROC AUC with tie averaging; 0.5 for constant scores."""
    labels = np.array([r.label for r in scored])
    scores = np.array([r.score for r in scored])
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def max_length_sweep(dataset, ckpt, lengths):
    """One PR curve per truncation length."""
    if any(n < 1 for n in lengths):
        raise ValueError("lengths must be positive")
    return {n: pr_curve(score_dataset(dataset, ckpt, max_len=n)) for n in lengths}


def margin_report(dataset, ckpt_a, ckpt_b):
    """Per image: score(positive) - best negative score, for two checkpoints."""

    def margins(ckpt):
        rows = score_dataset(dataset, ckpt)
        per_image = {}
        for r in rows:
            best_pos, best_neg = per_image.setdefault(r.image, [-1.0, -1.0])
            if r.label == 1:
                per_image[r.image][0] = max(best_pos, r.score)
            else:
                per_image[r.image][1] = max(best_neg, r.score)
        return {img: pos - neg for img, (pos, neg) in per_image.items()}

    ma, mb = margins(ckpt_a), margins(ckpt_b)
    images = sorted(ma)
    deltas = [mb[i] - ma[i] for i in images]
    return {
        "images": images,
        "margin_a": [ma[i] for i in images],
        "margin_b": [mb[i] for i in images],
        "mean_margin_a": float(np.mean([ma[i] for i in images])),
        "mean_margin_b": float(np.mean([mb[i] for i in images])),
        "mean_delta": float(np.mean(deltas)),
    }


def probe_shuffle(dataset, ckpt, trials=5, seed=0):
    """Word-order robustness: score random permutations of each positive.

    Reports the mean |score(original) - score(permuted)| and the fraction
    of permutations that stay rank-1 among the image's candidates.
    """
    charset = _check_checkpoint(ckpt)
    params = ckpt.tensors()
    subbatch = _subbatch_fn(ckpt)
    cfg = ckpt.config
    rng = np.random.default_rng(seed)
    img_rng = np.random.default_rng(cfg.seed)
    deltas, rank1 = [], []
    rank1_multi = []
    n_multi = 0
    for sample in dataset.samples:
        image = _prepared_image(load_image(dataset.image_path(sample)), ckpt, img_rng)
        for pos in sample.positives:
            perms = [shuffle_words(pos, rng) for _ in range(trials)]
            candidates = [pos] + perms + list(sample.negatives)
            encoded = [encode(c, charset, cfg.max_len) for c in candidates]
            scores = [s.p_valid for s in subbatch(image, encoded, params, cfg.encoder)]
            orig = scores[0]
            perm_scores = scores[1:1 + trials]
            best_neg = max(scores[1 + trials:], default=float("-inf"))
            multi = len(pos.split(" ")) > 1
            n_multi += multi
            for p in perm_scores:
                deltas.append(abs(orig - p))
                rank1.append(p > best_neg)
                if multi:
                    rank1_multi.append(p > best_neg)
    return {
        "trials": trials,
        "n_positives": sum(len(s.positives) for s in dataset.samples),
        "n_multiword": n_multi,
        "mean_abs_delta": float(np.mean(deltas)) if deltas else 0.0,
        "rank1_fraction_all": float(np.mean(rank1)) if rank1 else 0.0,
        "rank1_fraction_multiword": float(np.mean(rank1_multi)) if rank1_multi else 0.0,
    }


def probe_masked(dataset, ckpt, seed=0):
    """Replace every image with uniform noise and measure the ranking AUC.

    An unbiased dataset leaves a text-only model at chance, so the AUC
    should sit near 0.5.
    """
    size = ckpt.config.encoder.input_size
    root = np.random.default_rng(seed)
    seeds = root.integers(2**31, size=len(dataset.samples))

    def noise_image(idx, sample):
        return np.random.default_rng(seeds[idx]).random((size, size), dtype=np.float32)

    rows = score_dataset(dataset, ckpt, _images=noise_image)
    return {"auc": roc_auc(rows), "n_pairs": len(rows)}


def ensemble_max(scores_a, scores_b):
    """Elementwise max over two aligned score lists."""
    if len(scores_a) != len(scores_b):
        raise ValueError(
            f"ensemble inputs differ in length: {len(scores_a)} vs {len(scores_b)}"
        )
    out = []
    for a, b in zip(scores_a, scores_b):
        if (a.image, a.candidate, a.label) != (b.image, b.candidate, b.label):
            raise ValueError(
                f"ensemble inputs misaligned at {a.image}/{a.candidate!r} vs "
                f"{b.image}/{b.candidate!r}"
            )
        out.append(
            ScoredCandidate(a.image, a.candidate, max(a.score, b.score), a.label)
        )
    return out


def image_search(query, dataset, ckpt, threshold=0.8):
    """Rank all images against a text query; keep scores >= threshold."""
    if not query.strip():
        raise ValueError("empty query")
    charset = _check_checkpoint(ckpt)
    params = ckpt.tensors()
    cfg = ckpt.config
    cand = encode(query, charset, cfg.max_len)
    rng = np.random.default_rng(cfg.seed)
    results = []
    for sample in dataset.samples:
        image = _prepared_image(load_image(dataset.image_path(sample)), ckpt, rng)
        if cfg.model == "guided":
            fmap = encode_image(image, cfg.encoder, params)
            score, _ = D.score_candidate(fmap, cand, params)
        else:
            score = D.score_no_attention(image, cand, params, cfg.encoder)
        if score.p_valid >= threshold:
            results.append((score.p_valid, sample.image))
    results.sort(key=lambda t: (-t[0], t[1]))
    return results


def write_scores_csv(scored, path):
    import csv

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image", "candidate", "label", "score"])
        for r in scored:
            writer.writerow([r.image, r.candidate, r.label, f"{r.score:.8g}"])


def read_scores_csv(path):
    import csv

    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["image", "candidate", "label", "score"]:
            raise ValueError(f"{path}: unexpected scores header {header}")
        for image, candidate, label, score in reader:
            rows.append(ScoredCandidate(image, candidate, float(score), int(label)))
    return rows
