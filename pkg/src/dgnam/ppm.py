"""Binary PPM (P6) output for images in [0, 1], plus montage grids."""

from __future__ import annotations

import numpy as np

from .errors import InputError, ParseError

GUTTER = 2  # pixels of black between montage cells


def _to_u8(image):
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputError(f"expected CHW image with 1 or 3 channels, got shape {image.shape}")
    img = np.clip(image, 0.0, 1.0)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    return (img * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, image):
    rgb = _to_u8(np.asarray(image, dtype=np.float32))
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path):
    """Returns a CHW float32 image with values k/255."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ParseError(f"not a binary PPM (magic {fields[0]!r}) at byte offset 0")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raw = data[pos : pos + w * h * 3]
    if len(raw) != w * h * 3:
        raise ParseError(f"truncated pixel payload at byte offset {pos + len(raw)}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return arr.astype(np.float32) / 255.0


def montage(images, cols=None):
    """Stack CHW images into one grid image with black gutters."""
    images = [np.asarray(im, dtype=np.float32) for im in images]
    if not images:
        raise InputError("montage requires at least one image")
    c, h, w = images[0].shape
    n = len(images)
    if cols is None:
        cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.zeros((c, rows * h + (rows - 1) * GUTTER, cols * w + (cols - 1) * GUTTER), dtype=np.float32)
    for i, im in enumerate(images):
        if im.shape != (c, h, w):
            raise InputError(f"montage image {i} has shape {im.shape}, expected {(c, h, w)}")
        r, col = divmod(i, cols)
        y, x = r * (h + GUTTER), col * (w + GUTTER)
        grid[:, y : y + h, x : x + w] = np.clip(im, 0.0, 1.0)
    return grid


def write_montage(path, images, cols=None):
    write_ppm(path, montage(images, cols))
