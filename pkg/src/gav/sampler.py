"""Per-image candidate sampling for training.

Phase 1 draws negatives uniformly; phase 2 (hard-negative mining) draws
only from negatives whose hardness against the image's positives exceeds
the threshold. Positives may be word-shuffled as augmentation: the model
should treat a name as a bag of words, so a permuted positive is still a
positive.
"""

from dataclasses import dataclass

from .textops import hardness


class HardPoolEmptyError(ValueError):
    """No negative passes the hardness threshold for this sample."""


@dataclass(frozen=True)
class SamplingConfig:
    n_pos: int = 1
    n_neg: int = 4
    shuffle_prob: float = 0.5
    hnm_threshold: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 0:
            raise ValueError(f"need n_pos >= 1 and n_neg >= 0, got {self.n_pos}/{self.n_neg}")
        if not 0.0 <= self.shuffle_prob <= 1.0:
            raise ValueError(f"shuffle_prob outside [0,1]: {self.shuffle_prob}")
        if not 0.0 <= self.hnm_threshold <= 1.0:
            raise ValueError(f"hnm_threshold outside [0,1]: {self.hnm_threshold}")

    def to_dict(self):
        return {
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "shuffle_prob": self.shuffle_prob,
            "hnm_threshold": self.hnm_threshold,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TrainingPair:
    image: str
    candidate: str
    label: int


def shuffle_words(text, rng):
    """Uniformly permute the words of `text` (split on single spaces)."""
    if not text:
        raise ValueError("cannot shuffle empty text")
    words = text.split(" ")
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def filter_hard(negatives, positives, threshold):
    """Keep negatives whose hardness strictly exceeds `threshold`, in order."""
    return [n for n in negatives if hardness(n, positives) > threshold]


def sample_pairs(sample, cfg, phase, rng):
    """Draw n_pos positive and n_neg negative pairs for one sample.

    Negatives come without replacement from the eligible pool, falling back
    to replacement when the pool is smaller than n_neg. Phase 2 restricts
    the pool to hardness > threshold and refuses to run on an empty pool.
    """
    if phase not in (1, 2):
        raise ValueError(f"phase must be 1 or 2, got {phase}")
    if not sample.positives:
        raise ValueError(f"sample {sample.image!r} has no positives")

    pairs = []
    for _ in range(cfg.n_pos):
        pos = sample.positives[int(rng.integers(len(sample.positives)))]
        if rng.random() < cfg.shuffle_prob:
            pos = shuffle_words(pos, rng)
        pairs.append(TrainingPair(image=sample.image, candidate=pos, label=1))

    if cfg.n_neg == 0:
        return pairs
    pool = list(sample.negatives)
    if phase == 2:
        pool = filter_hard(pool, sample.positives, cfg.hnm_threshold)
        if not pool:
            raise HardPoolEmptyError(
                f"sample {sample.image!r}: no negative has hardness > "
                f"{cfg.hnm_threshold}; regenerate the dataset or lower the threshold"
            )
    if not pool:
        raise ValueError(f"sample {sample.image!r} has no negatives to draw from")
    picks = rng.choice(len(pool), size=cfg.n_neg, replace=len(pool) < cfg.n_neg)
    pairs.extend(
        TrainingPair(image=sample.image, candidate=pool[int(i)], label=0) for i in picks
    )
    return pairs
