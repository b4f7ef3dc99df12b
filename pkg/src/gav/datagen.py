"""Synthetic storefront-style dataset generator and manifest I/O.

Each sample is an image with one rendered business-like name (the
positive) and a list of negative candidate names. Negatives are drawn from
the *other* generated names, so the name distribution of positives and
negatives is identical: a text-only model cannot beat chance by
construction. A slice of each negative list is biased toward the most
confusable other names so that hard-negative mining has material to work
with. Distractor words (real text in the image that is not a candidate)
are rendered alongside the positive.

Manifest format: `manifest.jsonl`, one object per line:
    {"image": "images/00042.pgm", "positives": [...], "negatives": [...]}
Images are binary PGM (P5). Everything is reproducible byte-for-byte from
the config seed.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import font5x7 as font
from .imageio import write_pgm
from .textops import edit_distance, hardness

MAX_CANDIDATE_LEN = 100

DEFAULT_VOCAB = (
    "star", "golden", "river", "house", "cafe", "barber", "bakery", "motors",
    "little", "grand", "blue", "lake", "inn", "shop", "garden", "bridge",
    "stone", "corner", "market", "fresh", "city", "royal", "sunset", "silver",
    "green", "rapid", "family", "dental", "pizza", "sushi", "tower", "plaza",
    "vintage", "modern", "coffee", "tea", "books", "cycle", "auto", "glass",
    "iron", "wood", "brick", "pearl", "ruby", "amber", "cedar", "maple",
    "oak", "pine", "willow", "harbor", "coast", "ocean", "wave", "cloud",
    "storm", "summit", "valley", "meadow", "canyon", "mesa", "delta", "union",
    "liberty", "crown", "castle", "palace", "lodge", "villa", "manor",
    "haven", "nest", "den", "studio", "gallery", "works", "labs", "forge",
    "mill", "dairy", "farm", "ranch", "orchard", "grove", "bloom", "petal",
    "rose", "lily", "daisy", "ivy", "fern", "moss", "salon", "spa", "clinic",
    "bistro", "diner", "grill", "tavern", "pub", "deli", "butcher", "fish",
    "noodle", "ramen", "taco", "burger", "crepe", "waffle", "donut", "bagel",
    "juice", "smoothie", "candy", "sweet", "spice", "herb", "olive", "lemon",
    "mango", "peach", "berry", "cherry", "apple", "plum", "grape", "melon",
    "north", "south", "east", "west", "central", "upper", "lower", "old",
    "new", "twin", "triple", "prime", "mega", "mini", "micro", "ultra",
    "express", "rapidus", "swift", "quick", "easy", "smart", "bright",
    "lucky", "happy", "sunny", "misty", "velvet", "cotton", "silk", "linen",
    "24", "99", "365", "five", "seven",
)


class ManifestError(ValueError):
    """Malformed manifest line; message carries the 1-based line number."""


@dataclass(frozen=True)
class Sample:
    """One image with its positive and negative candidate strings."""

    image: str
    positives: tuple
    negatives: tuple

    def to_json(self):
        return json.dumps(
            {
                "image": self.image,
                "positives": list(self.positives),
                "negatives": list(self.negatives),
            },
            ensure_ascii=False,
        )


@dataclass
class Dataset:
    directory: str
    samples: list

    def image_path(self, sample):
        return os.path.join(self.directory, sample.image)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class GenConfig:
    n_images: int = 2000
    vocabulary: tuple = DEFAULT_VOCAB
    words_per_name: tuple = (1, 4)
    candidates_per_image: tuple = (10, 10)
    image_size: int = 128
    rotation_deg: float = 4.0
    scale_min: int = 2
    scale_max: int = 3
    clutter: int = 2
    noise: float = 0.06
    hard_negatives: int = 2   # per image, drawn from the most confusable names
    hard_pool: int = 60       # other names scanned per image for hardness
    seed: int = 0

    def to_dict(self):
        return {
            "n_images": self.n_images,
            "vocabulary": list(self.vocabulary),
            "words_per_name": list(self.words_per_name),
            "candidates_per_image": list(self.candidates_per_image),
            "image_size": self.image_size,
            "rotation_deg": self.rotation_deg,
            "scale_min": self.scale_min,
            "scale_max": self.scale_max,
            "clutter": self.clutter,
            "noise": self.noise,
            "hard_negatives": self.hard_negatives,
            "hard_pool": self.hard_pool,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("vocabulary", "words_per_name", "candidates_per_image"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


# ---------------------------------------------------------------------------
# rendering


@dataclass(frozen=True)
class RenderPlan:
    """Every random choice needed to draw one image, frozen up front.

    Rendering a plan is pure, so the same plan can be re-drawn with the
    positive text suppressed to locate exactly which pixels it produced.
    """

    size: int
    lines: tuple          # wrapped positive name, one string per line
    scale: int
    top: int
    left: int
    distractors: tuple    # (word, scale, top, left)
    angle: float
    bg: float
    fg: float
    noise: float
    noise_seed: int

    @property
    def block_height(self):
        return len(self.lines) * font.CELL_H * self.scale

    @property
    def block_width(self):
        if not self.lines:
            return 0
        return max(font.text_size(line, self.scale)[1] for line in self.lines)


def _wrap_name(name, size, margin, scale):
    """Greedy word wrap at `scale`; shrink scale until the widest word fits."""
    words = name.split(" ")
    while scale > 1:
        budget = (size - 2 * margin) // (font.CELL_W * scale)
        if max(len(w) for w in words) <= budget:
            break
        scale -= 1
    budget = max((size - 2 * margin) // (font.CELL_W * scale), 1)
    lines, current = [], ""
    for w in words:
        trial = w if not current else current + " " + w
        if len(trial) <= budget:
            current = trial
        else:
            lines.append(current)
            current = w
    lines.append(current)
    return tuple(lines), scale


def _boxes_overlap(a, b, pad=2):
    ay, ax, ah, aw = a
    by, bx, bh, bw = b
    return not (
        ay + ah + pad <= by or by + bh + pad <= ay
        or ax + aw + pad <= bx or bx + bw + pad <= ax
    )


def make_plan(name, distractor_words, cfg, rng):
    """Lay out one image: position the name block, place distractors."""
    size, margin = cfg.image_size, 4
    scale = int(rng.integers(cfg.scale_min, cfg.scale_max + 1))
    lines, scale = _wrap_name(name, size, margin, scale)
    bh = len(lines) * font.CELL_H * scale
    bw = max(font.text_size(line, scale)[1] for line in lines)
    top = int(rng.integers(margin, max(size - margin - bh, margin) + 1))
    left = int(rng.integers(margin, max(size - margin - bw, margin) + 1))
    boxes = [(top, left, bh, bw)]

    placed = []
    for _ in range(cfg.clutter):
        if not distractor_words:
            break
        word = distractor_words[int(rng.integers(len(distractor_words)))]
        dscale = max(1, scale - int(rng.integers(0, 2)))
        dh, dw = font.text_size(word, dscale)
        for _ in range(20):
            dtop = int(rng.integers(0, max(size - dh, 1)))
            dleft = int(rng.integers(0, max(size - dw, 1)))
            box = (dtop, dleft, dh, dw)
            if not any(_boxes_overlap(box, other) for other in boxes):
                boxes.append(box)
                placed.append((word, dscale, dtop, dleft))
                break

    return RenderPlan(
        size=size,
        lines=lines,
        scale=scale,
        top=top,
        left=left,
        distractors=tuple(placed),
        angle=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
        bg=float(rng.uniform(0.08, 0.30)),
        fg=float(rng.uniform(0.70, 0.98)),
        noise=cfg.noise,
        noise_seed=int(rng.integers(2**31)),
    )


def render_plan(plan, draw_positive=True):
    """Draw a plan to a float32 [0,1] image; pure function of the plan."""
    mask = np.zeros((plan.size, plan.size), dtype=np.float32)
    if draw_positive:
        for i, line in enumerate(plan.lines):
            font.stamp_line(mask, line, plan.top + i * font.CELL_H * plan.scale,
                            plan.left, plan.scale)
    for word, scale, top, left in plan.distractors:
        font.stamp_line(mask, word, top, left, scale)
    if plan.angle:
        mask = ndimage.rotate(mask, plan.angle, reshape=False, order=1,
                              mode="constant", cval=0.0, prefilter=False)
        np.clip(mask, 0.0, 1.0, out=mask)
    img = plan.bg + mask * (plan.fg - plan.bg)
    noise_rng = np.random.default_rng(plan.noise_seed)
    img += noise_rng.uniform(-plan.noise, plan.noise, img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0, dtype=np.float32, casting="unsafe")


# ---------------------------------------------------------------------------
# dataset assembly


def _fresh_name(cfg, rng, seen):
    lo, hi = cfg.words_per_name
    for _ in range(200):
        k = int(rng.integers(lo, hi + 1))
        picks = rng.choice(len(cfg.vocabulary), size=k, replace=False)
        name = " ".join(cfg.vocabulary[i] for i in picks)
        if len(name) <= MAX_CANDIDATE_LEN and name not in seen:
            return name
    raise ValueError("vocabulary too small to build the requested distinct names")


def _sibling_name(base, cfg, rng, seen, lo=0.35, hi=0.95):
    """A distinct name confusable with `base` (hardness in (lo, hi])."""
    words = base.split(" ")
    for _ in range(30):
        if len(words) >= 2:
            pos = int(rng.integers(len(words)))
            pool = [
                w for w in cfg.vocabulary
                if w != words[pos] and abs(len(w) - len(words[pos])) <= 3
            ] or list(cfg.vocabulary)
            trial = list(words)
            trial[pos] = pool[int(rng.integers(len(pool)))]
            name = " ".join(trial)
        else:
            pool = [w for w in cfg.vocabulary if len(w) <= len(base) + 1]
            pool = pool or list(cfg.vocabulary)
            name = base + " " + pool[int(rng.integers(len(pool)))]
        if name in seen or len(name) > MAX_CANDIDATE_LEN:
            continue
        if lo < hardness(name, [base]) <= hi:
            return name
    return None


def _make_names(cfg, rng):
    """Distinct names, built in sibling pairs.

    Every name gets a partner whose hardness against it exceeds the mining
    threshold by a margin, so phase-2 negative pools are never empty.
    Returns (names, partners) where partners[i] is the index of name i's
    confusable sibling.
    """
    names, partners, seen = [], [], set()
    guard = 0
    while len(names) < cfg.n_images:
        guard += 1
        if guard > 50 * cfg.n_images:
            raise ValueError(
                f"vocabulary too small to build {cfg.n_images} distinct names"
            )
        base = _fresh_name(cfg, rng, seen)
        if len(names) == cfg.n_images - 1:
            # odd count: pair the last name with a random earlier one
            anchor = int(rng.integers(len(names))) if names else 0
            sib = _sibling_name(names[anchor], cfg, rng, seen) if names else None
            if names and sib is None:
                continue
            name = sib if names else base
            seen.add(name)
            names.append(name)
            partners.append(anchor if names[:-1] else 0)
            break
        sib = _sibling_name(base, cfg, rng, seen | {base})
        if sib is None:
            continue
        i = len(names)
        seen.update((base, sib))
        names.extend((base, sib))
        partners.extend((i + 1, i))
    return names, partners


def _pick_negatives(i, names, partner, n_neg, cfg, rng):
    """Sample negatives for image i: a hard slice plus uniform fill.

    The scan always includes the sibling partner, so the hard slice is
    guaranteed material above the default mining threshold.
    """
    others = np.arange(len(names) - 1)
    others[i:] += 1  # every index except i
    scan_size = min(cfg.hard_pool, others.size)
    scan = set(int(j) for j in rng.choice(others, size=scan_size, replace=False))
    if partner != i:
        scan.add(partner)
    scored = sorted(
        scan,
        key=lambda j: (hardness(names[j], [names[i]]), j),
        reverse=True,
    )
    n_hard = min(cfg.hard_negatives, n_neg, len(scored))
    chosen = scored[:n_hard]
    rest = scored[n_hard:]
    fill = n_neg - n_hard
    if fill > 0:
        if rest:
            extra = rng.choice(len(rest), size=fill, replace=len(rest) < fill)
            chosen.extend(rest[int(e)] for e in extra)
        else:
            # scanned pool exhausted (tiny dataset); draw from all others
            chosen.extend(int(e) for e in rng.choice(others, size=fill, replace=True))
    order = rng.permutation(len(chosen))
    return [names[chosen[int(o)]] for o in order]


def generate(cfg, out_dir, workers=1):
    """Render the whole dataset into `out_dir` and write its manifest.

    Returns the loaded Dataset. Per-image rendering is independent and can
    fan out over `workers` processes; bytes do not depend on worker count.
    """
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)

    ss = np.random.SeedSequence(cfg.seed)
    children = ss.spawn(cfg.n_images + 1)
    master = np.random.default_rng(children[0])

    names, partners = _make_names(cfg, master)
    lo, hi = cfg.candidates_per_image
    entries = []
    for i, name in enumerate(names):
        n_cand = int(master.integers(lo, hi + 1))
        negatives = _pick_negatives(i, names, partners[i], n_cand - 1, cfg, master)
        cand_words = set(name.split(" "))
        for neg in negatives:
            cand_words.update(neg.split(" "))
        eligible = tuple(w for w in cfg.vocabulary if w not in cand_words)
        entries.append((i, name, tuple(negatives), eligible))

    jobs = [(entry, children[entry[0] + 1], cfg, img_dir) for entry in entries]
    if workers > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(workers) as pool:
            pool.map(_render_job, jobs, chunksize=16)
    else:
        for job in jobs:
            _render_job(job)

    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w", encoding="utf-8") as f:
        for i, name, negatives, _ in entries:
            sample = Sample(
                image=f"images/{i:05d}.pgm",
                positives=(name,),
                negatives=negatives,
            )
            f.write(sample.to_json() + "\n")
    return load_manifest(out_dir)


def _render_job(job):
    (i, name, _negatives, eligible), child_seed, cfg, img_dir = job
    rng = np.random.default_rng(child_seed)
    plan = make_plan(name, eligible, cfg, rng)
    write_pgm(os.path.join(img_dir, f"{i:05d}.pgm"), render_plan(plan))


# ---------------------------------------------------------------------------
# manifest I/O


def load_manifest(path):
    """Read a dataset directory (or manifest file); validate every line."""
    if os.path.isdir(path):
        directory, manifest = path, os.path.join(path, "manifest.jsonl")
    else:
        directory, manifest = os.path.dirname(path) or ".", path
    samples = []
    with open(manifest, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                image = row["image"]
                positives = tuple(row["positives"])
                negatives = tuple(row["negatives"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{manifest}:{lineno}: {exc}") from None
            if not positives:
                raise ManifestError(f"{manifest}:{lineno}: sample has no positives")
            overlap = {p.lower() for p in positives} & {n.lower() for n in negatives}
            if overlap:
                raise ManifestError(
                    f"{manifest}:{lineno}: positives overlap negatives: {sorted(overlap)}"
                )
            too_long = [c for c in positives + negatives if len(c) > MAX_CANDIDATE_LEN]
            if too_long:
                raise ManifestError(
                    f"{manifest}:{lineno}: candidate longer than {MAX_CANDIDATE_LEN} chars"
                )
            samples.append(Sample(image=image, positives=positives, negatives=negatives))
    return Dataset(directory=directory, samples=samples)


# ---------------------------------------------------------------------------
# statistics


def dataset_stats(dataset):
    """Histograms over candidate counts, lengths, and negative-to-positive
    edit distances; returns {metric: [(bin, count, cumulative_fraction)]}."""
    counts = [len(s.positives) + len(s.negatives) for s in dataset.samples]
    lengths = [len(c) for s in dataset.samples for c in s.positives + s.negatives]
    distances = [
        min(edit_distance(neg, pos) for pos in s.positives)
        for s in dataset.samples
        for neg in s.negatives
    ]
    return {
        "candidates_per_image": _histogram(counts),
        "candidate_length": _histogram(lengths),
        "negative_edit_distance": _histogram(distances),
    }


def _histogram(values):
    total = len(values)
    if not total:
        return []
    rows, running = [], 0
    for value in sorted(set(values)):
        n = values.count(value)
        running += n
        rows.append((value, n, running / total))
    return rows


def write_stats_csv(stats, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("metric,bin,count,cumulative\n")
        for metric in sorted(stats):
            for bin_, count, cum in stats[metric]:
                f.write(f"{metric},{bin_},{count},{cum:.6f}\n")


def worker_count(default=1):
    """Worker-process cap from the GAV_THREADS environment variable."""
    raw = os.environ.get("GAV_THREADS", "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError:
        return default
