"""Dataset ingestion, splits, and the image modifications used for the
modified-dataset reflection experiments.

Supported on-disk inputs: IDX (MNIST-style), CIFAR-10 binary batches, and the
package's own container (which round-trips float images exactly and carries
class names). A procedural toy dataset provides a desk-scale corpus when no
real dataset is on hand.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import InputError, ParseError

CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixels


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    class_names: list = field(default_factory=list)
    split: str = "all"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) == 0:
            raise InputError(f"images must be a non-empty NCHW array, got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise InputError("labels length must match image count")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise InputError("image values must lie in [0, 1]")
        k = self.num_classes
        if k and (self.labels.min() < 0 or self.labels.max() >= k):
            raise InputError(f"labels must lie in [0, {k})")

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class Modification:
    kind: str  # quarter_shuffle | channel_brg | gaussian_blur
    seed: int = 0  # permutation stream for quarter_shuffle
    radius: float = 3.0  # gaussian_blur only

    def __post_init__(self):
        if self.kind not in ("quarter_shuffle", "channel_brg", "gaussian_blur"):
            raise InputError(f"unknown modification kind {self.kind!r}")
        if self.kind == "gaussian_blur" and self.radius <= 0:
            raise InputError(f"blur radius must be positive, got {self.radius}")


# ---------------------------------------------------------------------------
# binary format parsers

_IDX_DTYPES = {0x08: (np.uint8, 1)}


def parse_idx(data):
    """Decode an IDX payload into a float array; u8 pixels are scaled to [0, 1]."""
    if len(data) < 4:
        raise ParseError("truncated IDX header at byte offset 0")
    if data[0] != 0 or data[1] != 0:
        raise ParseError(f"bad IDX magic high bytes {data[:2].hex()} at byte offset 0")
    dtype_code, ndim = data[2], data[3]
    if dtype_code not in _IDX_DTYPES:
        raise ParseError(f"unsupported IDX dtype code 0x{dtype_code:02x}")
    np_dtype, itemsize = _IDX_DTYPES[dtype_code]
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise ParseError(f"truncated IDX dimension list at byte offset {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    n = int(np.prod(dims)) if ndim else 0
    if n == 0:
        raise InputError(f"empty dataset: IDX dims {dims}")
    payload = data[header_len : header_len + n * itemsize]
    if len(payload) != n * itemsize:
        raise ParseError(f"truncated IDX payload at byte offset {header_len + len(payload)}")
    arr = np.frombuffer(payload, dtype=np_dtype).reshape(dims)
    return arr.astype(np.float32) / 255.0


def parse_cifar_binary(data):
    """Decode CIFAR-10 binary batch records (label byte + 3072 channel-major pixels)."""
    if len(data) == 0:
        raise InputError("empty dataset: no CIFAR records")
    if len(data) % CIFAR_RECORD:
        raise ParseError(f"length {len(data)} is not a multiple of {CIFAR_RECORD}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    names = [f"class{i}" for i in range(int(labels.max()) + 1)]
    return Dataset(images, labels, names)


def load_idx_dataset(images_path, labels_path, class_names=None):
    with open(images_path, "rb") as f:
        images = parse_idx(f.read())
    with open(labels_path, "rb") as f:
        labels = (parse_idx(f.read()) * 255.0 + 0.5).astype(np.int64)
    if images.ndim == 3:
        images = images[:, None]
    names = class_names or [str(i) for i in range(int(labels.max()) + 1)]
    return Dataset(images, labels, names)


# ---------------------------------------------------------------------------
# package container (internal canonical form; exact float round-trip)

DS_MAGIC = b"DGNDS\0"


def save_dataset(path, ds):
    with open(path, "wb") as f:
        f.write(DS_MAGIC)
        f.write(struct.pack("<H", 1))
        n, c, h, w = ds.images.shape
        f.write(struct.pack("<4I", n, c, h, w))
        names = "\n".join(ds.class_names).encode("utf-8")
        f.write(struct.pack("<I", len(names)))
        f.write(names)
        split = ds.split.encode("utf-8")
        f.write(struct.pack("<I", len(split)))
        f.write(split)
        f.write(ds.labels.astype("<i8").tobytes())
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(DS_MAGIC):
        raise ParseError(f"bad dataset magic {data[:6]!r} at byte offset 0")
    pos = len(DS_MAGIC) + 2
    n, c, h, w = struct.unpack("<4I", data[pos : pos + 16])
    pos += 16
    (ln,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    names = data[pos : pos + ln].decode("utf-8").split("\n") if ln else []
    pos += ln
    (ls,) = struct.unpack("<I", data[pos : pos + 4])
    pos += 4
    split = data[pos : pos + ls].decode("utf-8")
    pos += ls
    labels = np.frombuffer(data[pos : pos + 8 * n], dtype="<i8").astype(np.int64)
    pos += 8 * n
    need = 4 * n * c * h * w
    if len(data) - pos != need:
        raise ParseError(f"truncated dataset payload at byte offset {len(data)}")
    images = np.frombuffer(data[pos:], dtype="<f4").reshape(n, c, h, w).astype(np.float32)
    return Dataset(images, labels, names, split)


def open_dataset(path):
    """Load any supported dataset file, sniffing the format by magic/shape."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head.startswith(DS_MAGIC):
        return load_dataset(path)
    with open(path, "rb") as f:
        data = f.read()
    if len(data) % CIFAR_RECORD == 0:
        return parse_cifar_binary(data)
    raise ParseError(f"unrecognized dataset file {path}")


# ---------------------------------------------------------------------------
# splits

def split_dataset(ds, val_fraction=0.2, seed=0):
    """Deterministic, disjoint, exhaustive train/validation split."""
    if not 0.0 < val_fraction < 1.0:
        raise InputError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_val = max(1, int(round(len(ds) * val_fraction)))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    train = Dataset(ds.images[train_idx], ds.labels[train_idx], list(ds.class_names), "train")
    val = Dataset(ds.images[val_idx], ds.labels[val_idx], list(ds.class_names), "val")
    return train, val


# ---------------------------------------------------------------------------
# image modifications

def quarter_shuffle(image, permutation):
    """Re-stitch the four quadrants (TL, TR, BL, BR row-major) in a new order."""
    c, h, w = image.shape
    if h % 2 or w % 2:
        raise InputError(f"quarter_shuffle needs even extents, got ({h}, {w})")
    if sorted(permutation) != [0, 1, 2, 3]:
        raise InputError(f"not a permutation of quadrants: {permutation}")
    hh, hw = h // 2, w // 2
    quads = [
        image[:, :hh, :hw],
        image[:, :hh, hw:],
        image[:, hh:, :hw],
        image[:, hh:, hw:],
    ]
    out = np.empty_like(image)
    slots = [(slice(None), slice(0, hh), slice(0, hw)), (slice(None), slice(0, hh), slice(hw, w)),
             (slice(None), slice(hh, h), slice(0, hw)), (slice(None), slice(hh, h), slice(hw, w))]
    for slot, src in zip(slots, permutation):
        out[slot] = quads[src]
    return out


def channel_brg(image):
    """RGB -> BRG: out[0] = in[2], out[1] = in[0], out[2] = in[1]."""
    if image.shape[0] != 3:
        raise InputError(f"channel_brg needs 3 channels, got {image.shape[0]}")
    return image[[2, 0, 1]].copy()


BRG_PERMUTATION = (2, 0, 1)  # out channel c comes from in channel BRG_PERMUTATION[c]


def gaussian_blur(image, radius):
    """Separable Gaussian with sigma = radius, kernel truncated at 3 sigma,
    reflected edges."""
    if radius <= 0:
        raise InputError(f"blur radius must be positive, got {radius}")
    out = np.empty_like(image)
    for c in range(image.shape[0]):
        out[c] = ndimage.gaussian_filter(image[c], sigma=radius, truncate=3.0, mode="reflect")
    return out


def apply_modification(image, mod, rng=None):
    if mod.kind == "channel_brg":
        return channel_brg(image)
    if mod.kind == "gaussian_blur":
        return np.clip(gaussian_blur(image, mod.radius), 0.0, 1.0)
    perm = (rng or np.random.default_rng(mod.seed)).permutation(4)
    return quarter_shuffle(image, list(perm))


def build_modified_dataset(base, mod):
    """Double the class count: classes [k, 2k) are modified copies of [0, k)."""
    k = base.num_classes
    rng = np.random.default_rng(mod.seed)
    modified = np.stack([apply_modification(im, mod, rng) for im in base.images])
    images = np.concatenate([base.images, modified])
    labels = np.concatenate([base.labels, base.labels + k])
    names = list(base.class_names) + [f"{n}_{mod.kind}" for n in base.class_names]
    return Dataset(images, labels, names, base.split)


# ---------------------------------------------------------------------------
# procedural toy corpus: classes are (shape, color) combinations

_SHAPES = ("hstripes", "vstripes", "checker", "disk", "ring")
# palette chosen so the BRG permutation of any color is not itself a palette color
_COLORS = (
    ("amber", (0.90, 0.60, 0.10)),
    ("azure", (0.10, 0.50, 0.90)),
    ("magenta", (0.60, 0.10, 0.60)),
    ("lime", (0.30, 0.90, 0.30)),
)


def _draw_shape(shape, size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    if shape == "hstripes":
        phase = rng.uniform(0, 8)
        return (np.sin((yy + phase) * (2 * np.pi / 8)) > 0).astype(np.float32)
    if shape == "vstripes":
        phase = rng.uniform(0, 8)
        return (np.sin((xx + phase) * (2 * np.pi / 8)) > 0).astype(np.float32)
    if shape == "checker":
        phase = rng.integers(0, 8)
        return (((yy + phase) // 4 + (xx + phase) // 4) % 2).astype(np.float32)
    cy = size / 2 + rng.uniform(-3, 3)
    cx = size / 2 + rng.uniform(-3, 3)
    r = size * rng.uniform(0.28, 0.38)
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if shape == "disk":
        return (d < r).astype(np.float32)
    return ((d < r) & (d > r * 0.55)).astype(np.float32)


def make_toy_dataset(per_class=100, size=32, seed=0, shapes=_SHAPES, colors=_COLORS):
    """Color-by-shape corpus: one class per (shape, color) pair."""
    rng = np.random.default_rng(seed)
    images, labels, names = [], [], []
    label = 0
    for shape in shapes:
        for cname, rgb in colors:
            names.append(f"{cname}_{shape}")
            for _ in range(per_class):
                mask = _draw_shape(shape, size, rng)
                base = rng.uniform(0.05, 0.15)
                img = np.full((3, size, size), base, dtype=np.float32)
                gain = rng.uniform(0.8, 1.0)
                for c in range(3):
                    img[c] += mask * rgb[c] * gain
                img += rng.normal(0, 0.02, img.shape).astype(np.float32)
                images.append(np.clip(img, 0.0, 1.0))
                labels.append(label)
            label += 1
    return Dataset(np.stack(images), np.array(labels), names)
