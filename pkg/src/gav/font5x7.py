"""Built-in 5x7 bitmap font: lowercase letters, digits, space.

Hand-authored dot-matrix glyphs so rendered datasets are byte-identical
everywhere, with no system font dependency. Letters use the classic
uppercase letterforms; the charset is case-folded anyway.
"""

import numpy as np

_GLYPHS = {
    "a": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "b": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "c": (".####", "#....", "#....", "#....", "#....", "#....", ".####"),
    "d": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "e": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "f": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "g": (".####", "#....", "#....", "#.###", "#...#", "#...#", ".###."),
    "h": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "i": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"),
    "j": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "k": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "l": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "m": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "n": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "o": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "p": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "r": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "s": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "t": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "u": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "v": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "w": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "x": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", "#####"),
    "2": (".###.", "#...#", "....#", "..##.", ".#...", "#....", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": (".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
}

GLYPH_H = 7
GLYPH_W = 5
CELL_H = 8  # glyph + 1 row spacing
CELL_W = 6  # glyph + 1 col spacing

BITMAPS = {
    ch: np.array([[p == "#" for p in row] for row in rows], dtype=np.float32)
    for ch, rows in _GLYPHS.items()
}


def glyph(ch):
    """Bitmap for one character; unknown characters render as space."""
    return BITMAPS.get(ch, BITMAPS[" "])


def text_size(text, scale=1):
    """(height, width) in pixels of a single line at the given scale."""
    if not text:
        return (0, 0)
    return (GLYPH_H * scale, (CELL_W * len(text) - 1) * scale)


def stamp_line(canvas, text, top, left, scale=1, value=1.0):
    """Draw one line of text onto `canvas` in place, clipping at borders."""
    h, w = canvas.shape
    for k, ch in enumerate(text):
        bm = glyph(ch)
        if not bm.any():
            continue
        big = np.kron(bm, np.ones((scale, scale), dtype=np.float32))
        y, x = top, left + k * CELL_W * scale
        y0, x0 = max(y, 0), max(x, 0)
        y1, x1 = min(y + big.shape[0], h), min(x + big.shape[1], w)
        if y1 <= y0 or x1 <= x0:
            continue
        patch = big[y0 - y:y1 - y, x0 - x:x1 - x]
        region = canvas[y0:y1, x0:x1]
        np.maximum(region, patch * value, out=region)
