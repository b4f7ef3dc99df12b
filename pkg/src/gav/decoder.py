"""Text-guided attention decoder.

For each character of a candidate string, the previous LSTM state queries
the image feature grid: every cell gets a relevance score
e = v' tanh(W h + U f), a spatial softmax turns the scores into an
attention map, and the attention-weighted sum of cell features becomes the
context vector fed into the LSTM together with the character embedding.
The verification probability is the sigmoid readout at the candidate's own
last step.

A "no attention" baseline lives here too: the feature grid is mean-pooled
to one vector, projected into embedding space, and fed as the first LSTM
input, with the same last-step readout.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import tensor as T
from .encoder import encode_image
from .tensor import Tensor


@dataclass(frozen=True)
class DecoderDims:
    embed: int = 32
    hidden: int = 128
    attn: int = 64

    def to_dict(self):
        return {"embed": self.embed, "hidden": self.hidden, "attn": self.attn}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(dims, feature_depth, charset_size, model="guided"):
    """Name -> shape for the decoder parameters of either model variant."""
    d, e, a = dims.hidden, dims.embed, dims.attn
    if model == "guided":
        shapes = {
            "embed": (charset_size, e),
            "lstm_wx": (e + feature_depth, 4 * d),
            "attn_w": (d, a),
            "attn_u": (feature_depth, a),
            "attn_v": (a,),
        }
    elif model == "no_attention":
        shapes = {
            "embed": (charset_size, e),
            "proj_w": (feature_depth, e),
            "proj_b": (e,),
            "lstm_wx": (e, 4 * d),
        }
    else:
        raise ValueError(f"unknown model kind {model!r}")
    shapes.update({
        "lstm_wh": (d, 4 * d),
        "lstm_b": (4 * d,),
        "head_w": (d, 1),
        "head_b": (1,),
    })
    return shapes


@dataclass
class Score:
    """Verification output for one (image, candidate) pair.

    `p_valid` is the sigmoid readout at the candidate's own last step;
    `per_step` holds y_1..y_N (computed, but only the last enters any
    loss). `last_logit` keeps the pre-sigmoid graph node so training can
    build a numerically safe cross-entropy from logits.
    """

    p_valid: float
    per_step: tuple
    last_logit: Tensor = field(repr=False, default=None)


@dataclass
class AttentionTrace:
    """Per-step relevance grids e^t and attention grids alpha^t (H x W)."""

    alpha: list
    e: list

    def to_jsonable(self):
        return {
            "steps": [
                {"alpha": a.tolist(), "e": e.tolist()}
                for a, e in zip(self.alpha, self.e)
            ]
        }

    def to_json(self, indent=None):
        return json.dumps(self.to_jsonable(), indent=indent)


def _zeros_state(params):
    d = params["lstm_wh"].shape[0]
    dtype = params["lstm_wh"].dtype
    h = Tensor(np.zeros((1, d), dtype=dtype))
    c = Tensor(np.zeros((1, d), dtype=dtype))
    return h, c


def _attend(h_prev, flat, uf, params):
    """One attention read; flat is [HW, F], uf the precomputed flat @ U."""
    return T.attention_read(h_prev, flat, uf, params["attn_w"], params["attn_v"])


def attend(h_prev, fmap, params):
    """Context vector, attention grid and relevance grid for one query."""
    flat = fmap.flat()
    uf = T.matmul(flat, params["attn_u"])
    context, alpha, e = _attend(h_prev, flat, uf, params)
    shape = (fmap.height, fmap.width)
    return context, alpha.reshape(shape), e.reshape(shape)


def _lstm(x, h_prev, c_prev, params):
    return T.lstm_cell(
        x, h_prev, c_prev, params["lstm_wx"], params["lstm_wh"], params["lstm_b"]
    )


def _head(h, params):
    return T.add(T.matmul(h, params["head_w"]), params["head_b"])


def _step(h_prev, c_prev, char_index, flat, uf, params):
    emb = T.embedding(params["embed"], [char_index])
    context, alpha, e = _attend(h_prev, flat, uf, params)
    x = T.concat([emb, context], axis=1)
    h, c = _lstm(x, h_prev, c_prev, params)
    logit = _head(h, params)
    return h, c, logit, alpha, e


def decode_step(h_prev, c_prev, char_index, fmap, params):
    """Advance the decoder by one character; returns (h, c, y_t, alpha^t)."""
    flat = fmap.flat()
    uf = T.matmul(flat, params["attn_u"])
    h, c, logit, alpha, _ = _step(h_prev, c_prev, char_index, flat, uf, params)
    y_t = float(expit(logit.data[0, 0]))
    return h, c, y_t, alpha.reshape(fmap.height, fmap.width)


def _roll(flat, uf, indices, params, grid_shape):
    h, c = _zeros_state(params)
    probs, alphas, es = [], [], []
    logit = None
    for idx in indices:
        h, c, logit, alpha, e = _step(h, c, idx, flat, uf, params)
        probs.append(float(expit(logit.data[0, 0])))
        alphas.append(alpha.reshape(grid_shape).copy())
        es.append(e.reshape(grid_shape).copy())
    score = Score(p_valid=probs[-1], per_step=tuple(probs), last_logit=logit)
    return score, AttentionTrace(alpha=alphas, e=es)


def score_candidate(fmap, candidate, params):
    """Score one encoded candidate against an encoded image."""
    if candidate.length < 1:
        raise ValueError("cannot score an empty candidate")
    flat = fmap.flat()
    uf = T.matmul(flat, params["attn_u"])
    return _roll(flat, uf, candidate.indices, params, (fmap.height, fmap.width))


def score_subbatch(image, candidates, params, enc_cfg):
    """Score M candidates against one image, encoding the image once.

    The shared tower is purely an optimization: each candidate is decoded
    independently on the single feature map, so results match per-candidate
    scoring exactly.
    """
    if not candidates:
        raise ValueError("score_subbatch needs at least one candidate")
    fmap = encode_image(image, enc_cfg, params)
    flat = fmap.flat()
    uf = T.matmul(flat, params["attn_u"])
    shape = (fmap.height, fmap.width)
    return [_roll(flat, uf, cand.indices, params, shape)[0] for cand in candidates]


def score_training_batch(images, candidate_lists, params, enc_cfg, pad_index):
    """Trainer fast path: all candidate rollouts of a batch in lockstep.

    `images` is a [B, S, S] stack, `candidate_lists` one candidate list per
    image. Shorter candidates are padded with `pad_index` and keep their
    own last-step readout, so padding steps never touch any output.
    Returns one Score list per image (same contract as score_subbatch).
    """
    from .encoder import encode_batch

    if len(images) != len(candidate_lists) or not candidate_lists:
        raise ValueError("need one nonempty candidate list per image")
    guided = "attn_u" in params
    fmap4 = encode_batch(images, enc_cfg, params)     # [B, h, w, F]
    b, gh, gw, depth = fmap4.shape
    hw = gh * gw
    flat3 = T.reshape(fmap4, (b, hw, depth))

    img_idx = [i for i, cands in enumerate(candidate_lists) for _ in cands]
    cands = [c for cands in candidate_lists for c in cands]
    m_tot = len(cands)
    rows_flat = T.embedding(flat3, img_idx)           # [M, HW, F]

    d = params["lstm_wh"].shape[0]
    dtype = params["lstm_wh"].dtype
    h = Tensor(np.zeros((m_tot, d), dtype=dtype))
    c = Tensor(np.zeros((m_tot, d), dtype=dtype))

    if guided:
        uf = T.matmul(T.reshape(flat3, (b * hw, depth)), params["attn_u"])
        uf_rows = T.embedding(T.reshape(uf, (b, hw, -1)), img_idx)
    else:
        pooled = T.reduce_mean(flat3, axis=1)          # [B, F]
        x0 = T.add(T.matmul(pooled, params["proj_w"]), params["proj_b"])
        h, c = _lstm(T.embedding(x0, img_idx), h, c, params)

    length = max(cand.length for cand in cands)
    index_matrix = np.full((length, m_tot), pad_index, dtype=np.int64)
    for j, cand in enumerate(cands):
        index_matrix[: cand.length, j] = cand.indices

    step_logits = []
    for t in range(length):
        emb = T.embedding(params["embed"], index_matrix[t])
        if guided:
            ctx, _ = T.attention_read_batch(
                h, rows_flat, uf_rows, params["attn_w"], params["attn_v"]
            )
            x = T.concat([emb, ctx], axis=1)
        else:
            x = emb
        h, c = _lstm(x, h, c, params)
        step_logits.append(_head(h, params))           # [M, 1]

    grouped, j = [], 0
    for cands_i in candidate_lists:
        scores_i = []
        for cand in cands_i:
            per_step = tuple(
                float(expit(step_logits[t].data[j, 0])) for t in range(cand.length)
            )
            last = T.slice_(step_logits[cand.length - 1], (slice(j, j + 1), slice(None)))
            scores_i.append(
                Score(p_valid=per_step[-1], per_step=per_step, last_logit=last)
            )
            j += 1
        grouped.append(scores_i)
    return grouped


def loss(scores, labels, pos_weight=1.0):
    """Mean weighted binary cross-entropy over last-step outputs.

    Positive pairs are scaled by `pos_weight`. Computed from logits
    (softplus(z) - z*y), never from clamped probabilities.
    """
    if len(scores) != len(labels) or not scores:
        raise ValueError(
            f"loss needs matching nonempty scores/labels, got {len(scores)}/{len(labels)}"
        )
    if any(y not in (0, 1) for y in labels):
        raise ValueError(f"labels must be 0 or 1, got {labels!r}")
    z = T.concat([s.last_logit for s in scores], axis=0)  # [M, 1]
    dtype = z.dtype
    y = Tensor(np.array(labels, dtype=dtype).reshape(-1, 1), dtype=dtype)
    w = Tensor(
        np.where(np.array(labels) == 1, pos_weight, 1.0).astype(dtype).reshape(-1, 1),
        dtype=dtype,
    )
    bce = T.sub(T.softplus(z), T.mul(z, y))
    return T.reduce_mean(T.mul(bce, w))


def _no_attention_roll(x0, indices, params):
    h, c = _zeros_state(params)
    h, c = _lstm(x0, h, c, params)
    probs = []
    logit = None
    for idx in indices:
        emb = T.embedding(params["embed"], [idx])
        h, c = _lstm(emb, h, c, params)
        logit = _head(h, params)
        probs.append(float(expit(logit.data[0, 0])))
    return Score(p_valid=probs[-1], per_step=tuple(probs), last_logit=logit)


def _no_attention_first_input(fmap, params):
    pooled = T.reduce_mean(fmap.flat(), axis=0, keepdims=True)      # [1, F]
    return T.add(T.matmul(pooled, params["proj_w"]), params["proj_b"])


def score_no_attention(image, candidate, params, enc_cfg):
    """Baseline: pooled image vector as the first LSTM input, no attention."""
    if candidate.length < 1:
        raise ValueError("cannot score an empty candidate")
    fmap = encode_image(image, enc_cfg, params)
    x0 = _no_attention_first_input(fmap, params)
    return _no_attention_roll(x0, candidate.indices, params)


def score_no_attention_subbatch(image, candidates, params, enc_cfg):
    """Sub-batch variant of the baseline; the image vector is computed once."""
    if not candidates:
        raise ValueError("score_no_attention_subbatch needs at least one candidate")
    fmap = encode_image(image, enc_cfg, params)
    x0 = _no_attention_first_input(fmap, params)
    return [_no_attention_roll(x0, cand.indices, params) for cand in candidates]
