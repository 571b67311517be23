"""Checkpoint container: magic "DGNAM\\0", u16 LE version, length-prefixed
canonical spec text, u32 tensor count, then per tensor name / u8 ndim /
u32 dims / raw little-endian f32 data. Round-trips bit-exactly.

The same container carries code statistics (tensors "mean" and "std", layer
name in the text block).
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import ParseError
from .models import LayerSpec, NetworkInstance, NetworkSpec
from .tensor import Tensor

MAGIC = b"DGNAM\0"
VERSION = 1

_PARAM_KEY_ORDER = ("in", "out", "k", "stride", "pad", "fn", "slope", "shape")


def spec_to_text(spec, meta=None):
    lines = ["dgnam-spec v1"]
    lines.append("input " + " ".join(str(d) for d in spec.input_shape))
    if spec.code_layers:
        lines.append("codes " + " ".join(spec.code_layers))
    for k in sorted((meta or {})):
        lines.append(f"meta {k}={(meta or {})[k]}")
    for l in spec.layers:
        parts = [f"layer {l.name} {l.kind}"]
        for key in _PARAM_KEY_ORDER:
            if key in l.params:
                v = l.params[key]
                if key == "shape":
                    v = ",".join(str(d) for d in v)
                parts.append(f"{key}={v}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def spec_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "dgnam-spec v1":
        raise ParseError("missing dgnam-spec header line")
    input_shape = ()
    code_layers = ()
    meta = {}
    layers = []
    for ln in lines[1:]:
        kind, _, rest = ln.partition(" ")
        if kind == "input":
            input_shape = tuple(int(d) for d in rest.split())
        elif kind == "codes":
            code_layers = tuple(rest.split())
        elif kind == "meta":
            k, _, v = rest.partition("=")
            meta[k] = _coerce(v)
        elif kind == "layer":
            fields = rest.split()
            name, lkind = fields[0], fields[1]
            params = {}
            for kv in fields[2:]:
                k, _, v = kv.partition("=")
                if k == "shape":
                    params[k] = tuple(int(d) for d in v.split(","))
                elif k in ("fn",):
                    params[k] = v
                elif k == "slope":
                    params[k] = float(v)
                else:
                    params[k] = int(v)
            layers.append(LayerSpec(name, lkind, params))
        else:
            raise ParseError(f"unknown spec line {ln!r}")
    return NetworkSpec(tuple(layers), input_shape, code_layers), meta


def _coerce(v):
    for typ in (int, float):
        try:
            return typ(v)
        except ValueError:
            pass
    return v


def _write_str(f, s):
    b = s.encode("utf-8")
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def _read_str(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n).decode("utf-8")


def _read_exact(f, n):
    b = f.read(n)
    if len(b) != n:
        raise ParseError(f"truncated checkpoint at byte offset {f.tell()}")
    return b


def save_container(path, text, tensors):
    """tensors: ordered dict-like of name -> ndarray (written as f32 LE)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", VERSION))
        _write_str(f, text)
        f.write(struct.pack("<I", len(tensors)))
        for name in tensors:
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            _write_str(f, name)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_container(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ParseError(f"bad magic bytes {magic!r} at byte offset 0")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != VERSION:
            raise ParseError(f"unsupported checkpoint version {version}")
        text = _read_str(f)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            name = _read_str(f)
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(dims)
            tensors[name] = data.astype(np.float32)
        return text, tensors


def save_instance(path, net):
    tensors = {k: net.params[k].data for k in sorted(net.params)}
    save_container(path, spec_to_text(net.spec, net.training_meta), tensors)


def load_instance(path):
    text, tensors = load_container(path)
    spec, meta = spec_from_text(text)
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()}
    return NetworkInstance(spec, params, meta)


def save_code_stats(path, stats):
    text = f"dgnam-codestats v1\nlayer {stats.layer}\ncount {stats.count}\n"
    save_container(path, text, {"mean": stats.mean, "std": stats.std})


def load_code_stats(path):
    from .training import CodeStats

    text, tensors = load_container(path)
    layer, count = None, 0
    for ln in text.splitlines():
        if ln.startswith("layer "):
            layer = ln.split(" ", 1)[1]
        elif ln.startswith("count "):
            count = int(ln.split(" ", 1)[1])
    if layer is None:
        raise ParseError("code stats file missing layer name")
    return CodeStats(layer, tensors["mean"], tensors["std"], count)
