"""Convolutional image encoder with coordinate one-hot channels.

The encoder maps an input_size x input_size grayscale image to a small
spatial grid of feature vectors, then appends to every cell a one-hot
encoding of its column and row so the attention stage can reason about
position. Layout per cell: [C visual features | W column one-hot | H row
one-hot].
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

# (out_channels, conv_stride, pool) per 3x3 conv+relu block; strides and
# pools must multiply to a divisor of input_size
DEFAULT_BLOCKS = ((8, 2, 1), (16, 2, 1), (32, 1, 2), (48, 2, 1), (64, 1, 1))


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 128
    blocks: tuple = DEFAULT_BLOCKS

    def __post_init__(self):
        stride = self.total_stride
        if self.input_size % stride:
            raise ValueError(
                f"input_size {self.input_size} not divisible by total stride {stride}"
            )

    @property
    def total_stride(self):
        s = 1
        for _, stride, pool in self.blocks:
            s *= stride * pool
        return s

    @property
    def grid(self):
        g = self.input_size // self.total_stride
        return (g, g)

    @property
    def out_channels(self):
        return self.blocks[-1][0]

    @property
    def feature_depth(self):
        h, w = self.grid
        return self.out_channels + w + h

    def to_dict(self):
        return {"input_size": self.input_size, "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, d):
        return cls(input_size=d["input_size"], blocks=tuple(tuple(b) for b in d["blocks"]))


@dataclass
class FeatureMap:
    """Encoder output grid with coordinate channels already appended."""

    tensor: Tensor  # [H, W, C + W + H]
    height: int
    width: int
    channels: int

    @property
    def fv(self):
        return self.tensor.data[:, :, : self.channels]

    @property
    def fxy(self):
        return self.tensor.data[:, :, self.channels:]

    def flat(self):
        """[H*W, depth] view as a graph op (rows in row-major cell order)."""
        return T.reshape(self.tensor, (self.height * self.width, -1))


def param_shapes(cfg, in_channels=1):
    """Name -> shape for every encoder parameter."""
    shapes = {}
    cin = in_channels
    for i, (cout, _, _) in enumerate(cfg.blocks):
        shapes[f"conv{i}_w"] = (3, 3, cin, cout)
        shapes[f"conv{i}_b"] = (cout,)
        cin = cout
    return shapes


def coordinate_channels(height, width, dtype=np.float32):
    """[H, W, W+H] grid: column one-hot first, then row one-hot."""
    fxy = np.zeros((height, width, width + height), dtype=dtype)
    rows, cols = np.indices((height, width))
    fxy[rows, cols, cols] = 1.0
    fxy[rows, cols, width + rows] = 1.0
    return fxy


def encode_image(image, cfg, params):
    """Run the conv stack on one [0,1] grayscale image and tag coordinates.

    Differentiable with respect to `params`; the image itself is a constant.
    """
    image = np.asarray(image)
    if image.shape != (cfg.input_size, cfg.input_size):
        raise T.ShapeError(
            f"encode_image: expected {cfg.input_size}x{cfg.input_size} image, "
            f"got {image.shape}"
        )
    dtype = params[next(iter(params))].dtype
    x = Tensor(image.reshape(1, *image.shape, 1).astype(dtype), dtype=dtype)
    for i, (_, stride, pool) in enumerate(cfg.blocks):
        x = T.conv2d(x, params[f"conv{i}_w"], stride=stride, padding="same")
        x = T.add(x, params[f"conv{i}_b"])
        x = T.relu(x)
        if pool > 1:
            x = T.max_pool(x, pool)
    h, w = cfg.grid
    fv = T.reshape(x, (h, w, cfg.out_channels))
    fxy = Tensor(coordinate_channels(h, w, dtype=dtype))
    fmap = T.concat([fv, fxy], axis=2)
    return FeatureMap(tensor=fmap, height=h, width=w, channels=cfg.out_channels)


def encode_batch(stack, cfg, params):
    """Conv stack over a whole [B, S, S] image stack; coords appended.

    Returns one [B, H, W, C+W+H] tensor. The training loop uses this to
    push every image of a batch through BLAS together; per-image scoring
    semantics are unchanged (the stack axis never mixes).
    """
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[1:] != (cfg.input_size, cfg.input_size):
        raise T.ShapeError(
            f"encode_batch: expected [B,{cfg.input_size},{cfg.input_size}], "
            f"got {stack.shape}"
        )
    dtype = params[next(iter(params))].dtype
    x = Tensor(stack.reshape(*stack.shape, 1).astype(dtype), dtype=dtype)
    for i, (_, stride, pool) in enumerate(cfg.blocks):
        x = T.conv2d(x, params[f"conv{i}_w"], stride=stride, padding="same")
        x = T.add(x, params[f"conv{i}_b"])
        x = T.relu(x)
        if pool > 1:
            x = T.max_pool(x, pool)
    h, w = cfg.grid
    coords = coordinate_channels(h, w, dtype=dtype)
    tiled = np.broadcast_to(coords, (stack.shape[0], *coords.shape)).copy()
    return T.concat([x, Tensor(tiled)], axis=3)


def resize_pad(image, target, rng):
    """Aspect-preserving resize (longer side -> target), noise-padded.

    Returns a target x target float32 grid; the area not covered by the
    resized image is uniform noise in [0,1). A target-sized input passes
    through untouched.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2 or image.size == 0 or min(image.shape) == 0:
        raise ValueError(f"resize_pad: degenerate image shape {image.shape}")
    h, w = image.shape
    if (h, w) == (target, target):
        return image.copy()
    if h >= w:
        nh, nw = target, max(1, round(w * target / h))
    else:
        nh, nw = max(1, round(h * target / w)), target
    resized = _bilinear(image, nh, nw)
    out = rng.random((target, target), dtype=np.float32)
    out[:nh, :nw] = resized
    return out


def _bilinear(image, nh, nw):
    h, w = image.shape
    if (nh, nw) == (h, w):
        return image.copy()
    ys = np.clip((np.arange(nh) + 0.5) * h / nh - 0.5, 0, h - 1)
    xs = np.clip((np.arange(nw) + 0.5) * w / nw - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None].astype(np.float32)
    wx = (xs - x0)[None, :].astype(np.float32)
    a = image[np.ix_(y0, x0)]
    b = image[np.ix_(y0, x1)]
    c = image[np.ix_(y1, x0)]
    d = image[np.ix_(y1, x1)]
    top = a * (1 - wx) + b * wx
    bot = c * (1 - wx) + d * wx
    return top * (1 - wy) + bot * wy
