"""Two-phase training: from-scratch with uniform negatives, then
finetuning on hard negatives only. Single process, fully seeded.

Checkpoint file layout (little-endian throughout):
    magic "GAV1" (4 bytes)
    u32 length + UTF-8 JSON: {format, step, phase, config}
    per tensor, sorted by name:
        u32 name length, name (UTF-8), u32 rank, u32 extents..., f32 data
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import decoder as D
from . import tensor as T
from .decoder import DecoderDims
from .encoder import EncoderConfig, param_shapes as encoder_shapes, resize_pad
from .imageio import load_image
from .sampler import SamplingConfig, sample_pairs
from .tensor import Graph, RmsPropState, Tensor, backward
from .textops import Charset, encode

MAGIC = b"GAV1"
FORMAT = 1


class CheckpointVersionError(ValueError):
    pass


class CheckpointCorruptError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: str = "guided"            # or "no_attention"
    charset: str = Charset().chars
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dims: DecoderDims = field(default_factory=DecoderDims)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    max_len: int = 40
    batch_images: int = 8
    steps_phase1: int = 3000
    steps_phase2: int = 1500         # half of phase 1
    learning_rate: float = 0.001
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    pos_weight: float = 0.0          # 0 means n_neg/n_pos, resolved at use
    grad_clip: float = 5.0           # 0 disables clipping
    log_every: int = 50
    seed: int = 0

    def resolved_pos_weight(self):
        if self.pos_weight > 0:
            return self.pos_weight
        return max(self.sampling.n_neg, 1) / self.sampling.n_pos

    def to_dict(self):
        return {
            "model": self.model,
            "charset": Charset(self.charset).to_lines(),
            "encoder": self.encoder.to_dict(),
            "dims": self.dims.to_dict(),
            "sampling": self.sampling.to_dict(),
            "max_len": self.max_len,
            "batch_images": self.batch_images,
            "steps_phase1": self.steps_phase1,
            "steps_phase2": self.steps_phase2,
            "learning_rate": self.learning_rate,
            "rmsprop_decay": self.rmsprop_decay,
            "rmsprop_eps": self.rmsprop_eps,
            "pos_weight": self.pos_weight,
            "grad_clip": self.grad_clip,
            "log_every": self.log_every,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            model=d["model"],
            charset=Charset.from_lines(d["charset"]).chars,
            encoder=EncoderConfig.from_dict(d["encoder"]),
            dims=DecoderDims.from_dict(d["dims"]),
            sampling=SamplingConfig.from_dict(d["sampling"]),
            max_len=d["max_len"],
            batch_images=d["batch_images"],
            steps_phase1=d["steps_phase1"],
            steps_phase2=d["steps_phase2"],
            learning_rate=d["learning_rate"],
            rmsprop_decay=d["rmsprop_decay"],
            rmsprop_eps=d["rmsprop_eps"],
            pos_weight=d["pos_weight"],
            grad_clip=d["grad_clip"],
            log_every=d["log_every"],
            seed=d["seed"],
        )


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict                     # name -> float32 ndarray
    step: int = 0
    phase: int = 0

    def tensors(self):
        """Fresh trainable Tensors; the checkpoint itself stays untouched."""
        return {
            name: Tensor(arr.copy(), requires_grad=True)
            for name, arr in self.params.items()
        }

    def charset(self):
        return Charset(self.config.charset)


def model_param_shapes(cfg):
    shapes = dict(encoder_shapes(cfg.encoder))
    shapes.update(
        D.param_shapes(
            cfg.dims,
            cfg.encoder.feature_depth,
            Charset(cfg.charset).size,
            model=cfg.model,
        )
    )
    return shapes


def _fan_in(name, shape):
    if name.endswith("_b") or name == "lstm_b":
        return None  # biases are zero-initialized
    if name == "embed":
        return shape[1]
    if name.startswith("conv"):
        return shape[0] * shape[1] * shape[2]
    if name == "attn_v":
        return shape[0]
    return shape[0]


def init_params(cfg, seed):
    """Uniform fan-in-scaled weights, zero biases, forget-gate bias +1."""
    rng = np.random.default_rng(seed)
    shapes = model_param_shapes(cfg)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        fan = _fan_in(name, shape)
        if fan is None:
            arr = np.zeros(shape, dtype=np.float32)
        else:
            bound = 1.0 / math.sqrt(fan)
            arr = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = arr
    d = cfg.dims.hidden
    params["lstm_b"][d:2 * d] = 1.0
    return Checkpoint(config=cfg, params=params, step=0, phase=0)


# ---------------------------------------------------------------------------
# checkpoint file format


def save(ckpt, path):
    payload = {
        "format": FORMAT,
        "step": ckpt.step,
        "phase": ckpt.phase,
        "config": ckpt.config.to_dict(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in sorted(ckpt.params):
            arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _take(buf, offset, n, section):
    if offset + n > len(buf):
        raise CheckpointCorruptError(f"truncated checkpoint while reading {section}")
    return buf[offset:offset + n], offset + n


def load(path):
    with open(path, "rb") as f:
        buf = f.read()
    head, offset = _take(buf, 0, 4, "magic")
    if head != MAGIC:
        raise CheckpointVersionError(
            f"{path}: bad magic {head!r}, expected {MAGIC!r}"
        )
    raw, offset = _take(buf, offset, 4, "config length")
    (blob_len,) = struct.unpack("<I", raw)
    blob, offset = _take(buf, offset, blob_len, "config")
    try:
        payload = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"unreadable config block: {exc}") from None
    if payload.get("format") != FORMAT:
        raise CheckpointVersionError(
            f"unsupported checkpoint format {payload.get('format')!r}"
        )
    params = {}
    while offset < len(buf):
        raw, offset = _take(buf, offset, 4, "tensor name length")
        (name_len,) = struct.unpack("<I", raw)
        raw, offset = _take(buf, offset, name_len, "tensor name")
        name = raw.decode("utf-8")
        raw, offset = _take(buf, offset, 4, f"rank of {name}")
        (rank,) = struct.unpack("<I", raw)
        raw, offset = _take(buf, offset, 4 * rank, f"extents of {name}")
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape)) if shape else 1
        raw, offset = _take(buf, offset, 4 * count, f"tensor data for {name}")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(
        config=TrainConfig.from_dict(payload["config"]),
        params=params,
        step=payload["step"],
        phase=payload["phase"],
    )


# ---------------------------------------------------------------------------
# training loop


class _ImageCache:
    def __init__(self, dataset, input_size):
        self.dataset = dataset
        self.input_size = input_size
        self._cache = {}

    def get(self, sample, rng):
        img = self._cache.get(sample.image)
        if img is None:
            img = load_image(self.dataset.image_path(sample))
            self._cache[sample.image] = img
        if img.shape != (self.input_size, self.input_size):
            return resize_pad(img, self.input_size, rng)
        return img


def _balanced_accuracy(probs, labels):
    pos = [p for p, y in zip(probs, labels) if y == 1]
    neg = [p for p, y in zip(probs, labels) if y == 0]
    tpr = sum(p > 0.5 for p in pos) / len(pos) if pos else 0.0
    tnr = sum(p <= 0.5 for p in neg) / len(neg) if neg else 0.0
    return (tpr + tnr) / 2


def train(dataset, cfg, phase, init=None, log_path=None):
    """Run one training phase and return the resulting checkpoint.

    Phase 1 starts from `init` or a fresh initialization; phase 2 requires
    an `init` checkpoint to finetune. Loss and balanced accuracy over the
    pairs seen since the last log row go to `log_path` as CSV
    (step,phase,loss,accuracy) every log_every steps.
    """
    if phase not in (1, 2):
        raise ValueError(f"phase must be 1 or 2, got {phase}")
    if phase == 2 and init is None:
        raise ValueError("phase 2 finetunes an existing checkpoint; none given")
    if not dataset.samples:
        raise ValueError("empty dataset")

    ckpt = init if init is not None else init_params(cfg, cfg.seed)
    params = ckpt.tensors()
    state = RmsPropState(
        params,
        learning_rate=cfg.learning_rate,
        decay=cfg.rmsprop_decay,
        epsilon=cfg.rmsprop_eps,
    )
    charset = Charset(cfg.charset)
    pos_weight = cfg.resolved_pos_weight()
    steps = cfg.steps_phase1 if phase == 1 else cfg.steps_phase2
    rng = np.random.default_rng([cfg.seed, phase])
    cache = _ImageCache(dataset, cfg.encoder.input_size)

    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    if log_file:
        log_file.write("step,phase,loss,accuracy\n")
    window_probs, window_labels, window_losses = [], [], []

    try:
        for step in range(steps):
            picks = rng.integers(len(dataset.samples), size=cfg.batch_images)
            with Graph() as graph:
                batch = [dataset.samples[int(i)] for i in picks]
                pair_lists = [
                    sample_pairs(sample, cfg.sampling, phase, rng) for sample in batch
                ]
                encoded_lists = [
                    [encode(p.candidate, charset, cfg.max_len) for p in pairs]
                    for pairs in pair_lists
                ]
                label_lists = [[p.label for p in pairs] for pairs in pair_lists]
                images = np.stack([cache.get(sample, rng) for sample in batch])
                score_lists = D.score_training_batch(
                    images, encoded_lists, params, cfg.encoder, charset.pad
                )
                total = None
                for scores, labels in zip(score_lists, label_lists):
                    image_loss = D.loss(scores, labels, pos_weight)
                    total = image_loss if total is None else T.add(total, image_loss)
                    window_probs.extend(s.p_valid for s in scores)
                    window_labels.extend(labels)
                total = T.mul(total, 1.0 / cfg.batch_images)
                loss_value = total.item()
                if not math.isfinite(loss_value):
                    raise TrainingDivergedError(
                        f"phase {phase} step {step}: loss became {loss_value}"
                    )
                backward(graph, total)
            if cfg.grad_clip > 0:
                T.clip_grads(params, cfg.grad_clip)
            T.rmsprop_step(params, state)
            T.zero_grads(params)

            window_losses.append(loss_value)
            if log_file and (step + 1) % cfg.log_every == 0:
                acc = _balanced_accuracy(window_probs, window_labels)
                mean_loss = sum(window_losses) / len(window_losses)
                log_file.write(f"{step + 1},{phase},{mean_loss:.8g},{acc:.6f}\n")
                log_file.flush()
                window_probs, window_labels, window_losses = [], [], []
    finally:
        if log_file:
            log_file.close()

    return Checkpoint(
        config=cfg,
        params={name: t.data.copy() for name, t in params.items()},
        step=ckpt.step + steps,
        phase=phase,
    )
