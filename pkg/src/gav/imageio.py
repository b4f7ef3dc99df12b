"""Raster I/O: binary PGM out, PGM/PPM/PNG in, always [0,1] grayscale."""

import numpy as np

__all__ = ["write_pgm", "load_image"]


def write_pgm(path, image):
    """Write a grayscale image as binary PGM (P5, 8-bit).

    Accepts float arrays in [0,1] or uint8 arrays.
    """
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError(f"PGM writer needs a 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def _read_pnm_tokens(data, count):
    """Yield `count` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # header ends with exactly one whitespace byte


def _load_pnm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"{path}: not a supported PNM file (magic {magic!r})")
    tokens, offset = _read_pnm_tokens(data, 4)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    channels = 3 if magic in (b"P3", b"P6") else 1
    n = w * h * channels
    if magic in (b"P5", b"P6"):
        if len(data) - offset < n:
            raise ValueError(f"{path}: truncated pixel data")
        raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset)
    else:
        raw = np.array(data[offset - 1:].split()[:n], dtype=np.float64)
        if raw.size != n:
            raise ValueError(f"{path}: truncated pixel data")
    img = raw.reshape(h, w, channels).astype(np.float32) / float(maxval)
    return img[:, :, 0] if channels == 1 else img.mean(axis=2)


def load_image(path):
    """Load PGM/PPM/PNG as float32 grayscale in [0,1].

    Color images collapse to the per-pixel channel average.
    """
    path = str(path)
    with open(path, "rb") as f:
        head = f.read(2)
    if head in (b"P2", b"P3", b"P5", b"P6"):
        return _load_pnm(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, :, :3].mean(axis=2)
    return arr / 255.0
