"""Declarative layer graphs and their forward execution.

Networks are flat ordered lists of layers. Truncation at a named layer gives
the feature code used both to train the generator and as the optimization
variable during synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, InputError
from .tensor import Tensor

LAYER_KINDS = ("conv", "conv_transpose", "dense", "activation", "pool", "flatten", "reshape")
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InputError(f"unknown layer kind {self.kind!r} in layer {self.name!r}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple  # (C, H, W) or (D,)
    code_layers: tuple = ()

    def __post_init__(self):
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise InputError("layer names must be unique within a network")
        for cl in self.code_layers:
            if cl not in names:
                raise InputError(f"declared code layer {cl!r} does not exist")
        self.shapes_after()  # validates consecutive shape compatibility

    def layer_index(self, name):
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(f"unknown layer {name!r}")

    def shapes_after(self):
        """Per-layer output shapes (without batch axis); raises naming the failing layer."""
        shape = tuple(self.input_shape)
        out = []
        for l in self.layers:
            shape = _infer_shape(l, shape)
            out.append(shape)
        return out

    def output_shape(self):
        return self.shapes_after()[-1]

    def layer_output_shape(self, name):
        return self.shapes_after()[self.layer_index(name)]


def _infer_shape(l, shape):
    p = l.params
    try:
        if l.kind == "conv":
            c, h, w = shape
            if c != p["in"]:
                raise DimensionError(f"channel axis is {c}, expected {p['in']}")
            k, s, pad = p["k"], p.get("stride", 1), p.get("pad", 0)
            if h + 2 * pad < k or w + 2 * pad < k:
                raise DimensionError(f"kernel {k} exceeds padded extent of ({h}, {w})")
            return (p["out"], (h + 2 * pad - k) // s + 1, (w + 2 * pad - k) // s + 1)
        if l.kind == "conv_transpose":
            c, h, w = shape
            if c != p["in"]:
                raise DimensionError(f"channel axis is {c}, expected {p['in']}")
            k, s, pad = p["k"], p.get("stride", 1), p.get("pad", 0)
            return (p["out"], (h - 1) * s - 2 * pad + k, (w - 1) * s - 2 * pad + k)
        if l.kind == "dense":
            (d,) = shape
            if d != p["in"]:
                raise DimensionError(f"feature axis is {d}, expected {p['in']}")
            return (p["out"],)
        if l.kind == "activation":
            if p.get("fn", "relu") not in ACTIVATIONS:
                raise InputError(f"unknown activation {p.get('fn')!r}")
            return shape
        if l.kind == "pool":
            c, h, w = shape
            k = p["k"]
            if h % k or w % k:
                raise DimensionError(f"pool window {k} does not divide ({h}, {w})")
            return (c, h // k, w // k)
        if l.kind == "flatten":
            return (int(np.prod(shape)),)
        if l.kind == "reshape":
            tgt = tuple(p["shape"])
            if int(np.prod(tgt)) != int(np.prod(shape)):
                raise DimensionError(f"reshape to {tgt} changes element count from {shape}")
            return tgt
    except (ValueError, KeyError) as e:
        raise DimensionError(f"layer {l.name!r}: cannot apply {l.kind} to shape {shape} ({e})") from e
    except DimensionError as e:
        raise DimensionError(f"layer {l.name!r}: {e}") from e
    raise InputError(f"unknown layer kind {l.kind!r}")


@dataclass(frozen=True)
class Code:
    """Feature activations at a named layer for a batch-1 input."""

    layer: str
    values: Tensor


@dataclass
class NetworkInstance:
    spec: NetworkSpec
    params: dict  # name -> Tensor; keys "<layer>.w" / "<layer>.b"
    training_meta: dict = field(default_factory=dict)

    def param_list(self):
        return [self.params[k] for k in sorted(self.params)]

    def param_bytes(self):
        return b"".join(self.params[k].data.tobytes() for k in sorted(self.params))


def init_instance(spec, seed=0, weight_scale=None, meta=None):
    """He-style initialization of every parameterized layer, seeded."""
    rng = np.random.default_rng(seed)
    params = {}
    for l, out_shape in zip(spec.layers, _with_inputs(spec)):
        p = l.params
        if l.kind == "conv":
            fan_in = p["in"] * p["k"] * p["k"]
            w = rng.standard_normal((p["out"], p["in"], p["k"], p["k"]))
        elif l.kind == "conv_transpose":
            fan_in = p["in"] * p["k"] * p["k"]
            w = rng.standard_normal((p["in"], p["out"], p["k"], p["k"]))
        elif l.kind == "dense":
            fan_in = p["in"]
            w = rng.standard_normal((p["out"], p["in"]))
        else:
            continue
        scale = weight_scale if weight_scale is not None else np.sqrt(2.0 / fan_in)
        nb = p["out"] if l.kind != "conv_transpose" else p["out"]
        params[f"{l.name}.w"] = Tensor((w * scale).astype(np.float32), requires_grad=True)
        params[f"{l.name}.b"] = Tensor(np.zeros(nb, dtype=np.float32), requires_grad=True)
    return NetworkInstance(spec, params, dict(meta or {}))


def _with_inputs(spec):
    return spec.shapes_after()


def _apply_layer(l, params, x):
    p = l.params
    if l.kind == "conv":
        return T.conv2d(x, params[f"{l.name}.w"], params[f"{l.name}.b"], p.get("stride", 1), p.get("pad", 0))
    if l.kind == "conv_transpose":
        return T.conv2d_transpose(x, params[f"{l.name}.w"], params[f"{l.name}.b"], p.get("stride", 1), p.get("pad", 0))
    if l.kind == "dense":
        return T.dense(x, params[f"{l.name}.w"], params[f"{l.name}.b"])
    if l.kind == "activation":
        fn = p.get("fn", "relu")
        if fn == "relu":
            return T.relu(x)
        if fn == "leaky_relu":
            return T.leaky_relu(x, p.get("slope", 0.01))
        if fn == "tanh":
            return T.tanh(x)
        return T.sigmoid(x)
    if l.kind == "pool":
        return T.max_pool2d(x, p["k"])
    if l.kind == "flatten":
        return T.reshape(x, (x.shape[0], -1))
    if l.kind == "reshape":
        return T.reshape(x, (x.shape[0], *p["shape"]))
    raise InputError(f"unknown layer kind {l.kind!r}")


def _check_input(net, x):
    expected = tuple(net.spec.input_shape)
    if tuple(x.shape[1:]) != expected:
        raise DimensionError(f"input shape {tuple(x.shape[1:])} does not match spec input {expected}")


def forward(net, x):
    _check_input(net, x)
    for l in net.spec.layers:
        x = _apply_layer(l, net.params, x)
    return x


def forward_to_layer(net, layer, x):
    """Prefix forward up to and including `layer`, wrapped as a Code."""
    idx = net.spec.layer_index(layer)
    _check_input(net, x)
    for l in net.spec.layers[: idx + 1]:
        x = _apply_layer(l, net.params, x)
    return Code(layer, x)


def forward_from_layer(net, layer, values):
    """Resume the forward pass after `layer` from the given activations."""
    idx = net.spec.layer_index(layer)
    x = values
    for l in net.spec.layers[idx + 1 :]:
        x = _apply_layer(l, net.params, x)
    return x


def unit_activation(net, layer, unit_index, x):
    """Differentiable scalar activation of one unit at a named layer.

    For spatial layers the index selects a channel and the value is taken at
    the center position of that channel's map.
    """
    code = forward_to_layer(net, layer, x)
    v = code.values
    if len(v.shape) == 2:
        if not 0 <= unit_index < v.shape[1]:
            raise InputError(f"unit index {unit_index} out of range [0, {v.shape[1]})")
        return T.pick(v, (0, unit_index))
    if len(v.shape) == 4:
        _, c, h, w = v.shape
        if not 0 <= unit_index < c:
            raise InputError(f"unit index {unit_index} out of range [0, {c})")
        return T.pick(v, (0, unit_index, h // 2, w // 2))
    raise DimensionError(f"layer {layer!r} output has unsupported rank {len(v.shape)}")


def truncate_instance(net, layer):
    """Instance computing the prefix of `net` up to and including `layer`."""
    idx = net.spec.layer_index(layer)
    layers = net.spec.layers[: idx + 1]
    spec = NetworkSpec(layers, net.spec.input_shape, ())
    params = {k: v for k, v in net.params.items() if k.rsplit(".", 1)[0] in {l.name for l in layers}}
    return NetworkInstance(spec, params, dict(net.training_meta))


# ---------------------------------------------------------------------------
# built-in network roster

CODE_LAYERS = ("conv2_relu", "fc1_relu", "fc2_relu")
COMPARATOR_LAYER = "conv2_relu"


def encoder_a_spec(in_shape=(3, 32, 32), num_classes=20):
    c, h, w = in_shape
    flat = 48 * (h // 8) * (w // 8)
    layers = (
        LayerSpec("conv1", "conv", {"in": c, "out": 16, "k": 3, "stride": 1, "pad": 1}),
        LayerSpec("conv1_relu", "activation", {"fn": "relu"}),
        LayerSpec("pool1", "pool", {"k": 2}),
        LayerSpec("conv2", "conv", {"in": 16, "out": 32, "k": 3, "stride": 1, "pad": 1}),
        LayerSpec("conv2_relu", "activation", {"fn": "relu"}),
        LayerSpec("pool2", "pool", {"k": 2}),
        LayerSpec("conv3", "conv", {"in": 32, "out": 48, "k": 3, "stride": 1, "pad": 1}),
        LayerSpec("conv3_relu", "activation", {"fn": "relu"}),
        LayerSpec("pool3", "pool", {"k": 2}),
        LayerSpec("flat", "flatten"),
        LayerSpec("fc1", "dense", {"in": flat, "out": 128}),
        LayerSpec("fc1_relu", "activation", {"fn": "relu"}),
        LayerSpec("fc2", "dense", {"in": 128, "out": 64}),
        LayerSpec("fc2_relu", "activation", {"fn": "relu"}),
        LayerSpec("logits", "dense", {"in": 64, "out": num_classes}),
    )
    return NetworkSpec(layers, in_shape, CODE_LAYERS)


def encoder_b_spec(in_shape=(3, 32, 32), num_classes=20):
    """Same input/output contract as encoder_a, different depth and kernels."""
    c, h, w = in_shape
    flat = 40 * (h // 8) * (w // 8)
    layers = (
        LayerSpec("b_conv1", "conv", {"in": c, "out": 12, "k": 5, "stride": 2, "pad": 2}),
        LayerSpec("b_relu1", "activation", {"fn": "relu"}),
        LayerSpec("b_conv2", "conv", {"in": 12, "out": 24, "k": 5, "stride": 2, "pad": 2}),
        LayerSpec("b_relu2", "activation", {"fn": "relu"}),
        LayerSpec("b_conv3", "conv", {"in": 24, "out": 40, "k": 3, "stride": 2, "pad": 1}),
        LayerSpec("b_relu3", "activation", {"fn": "relu"}),
        LayerSpec("b_flat", "flatten"),
        LayerSpec("b_fc1", "dense", {"in": flat, "out": 96}),
        LayerSpec("b_fc1_relu", "activation", {"fn": "relu"}),
        LayerSpec("b_logits", "dense", {"in": 96, "out": num_classes}),
    )
    return NetworkSpec(layers, in_shape, ("b_relu2", "b_fc1_relu"))


def generator_spec(code_layer, in_shape=(3, 32, 32), encoder=None):
    """Mirror decoder mapping a code at `code_layer` back to an image in [0, 1]."""
    enc = encoder if encoder is not None else encoder_a_spec(in_shape)
    if code_layer not in enc.code_layers:
        raise KeyError(f"unknown code layer {code_layer!r}; declared: {enc.code_layers}")
    code_shape = enc.layer_output_shape(code_layer)
    c, h, w = in_shape
    hq, wq = h // 8, w // 8
    if len(code_shape) == 1:
        d = code_shape[0]
        layers = (
            LayerSpec("g_fc1", "dense", {"in": d, "out": 256}),
            LayerSpec("g_fc1_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("g_fc2", "dense", {"in": 256, "out": 64 * hq * wq}),
            LayerSpec("g_fc2_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("g_shape", "reshape", {"shape": (64, hq, wq)}),
            LayerSpec("g_up1", "conv_transpose", {"in": 64, "out": 48, "k": 4, "stride": 2, "pad": 1}),
            LayerSpec("g_up1_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("g_up2", "conv_transpose", {"in": 48, "out": 32, "k": 4, "stride": 2, "pad": 1}),
            LayerSpec("g_up2_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
            LayerSpec("g_up3", "conv_transpose", {"in": 32, "out": c, "k": 4, "stride": 2, "pad": 1}),
            LayerSpec("g_out", "activation", {"fn": "sigmoid"}),
        )
        return NetworkSpec(layers, (d,), ())
    cc, ch, cw = code_shape
    layers = (
        LayerSpec("g_conv1", "conv", {"in": cc, "out": 48, "k": 3, "stride": 1, "pad": 1}),
        LayerSpec("g_conv1_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("g_up1", "conv_transpose", {"in": 48, "out": 24, "k": 4, "stride": 2, "pad": 1}),
        LayerSpec("g_up1_relu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("g_conv2", "conv", {"in": 24, "out": c, "k": 3, "stride": 1, "pad": 1}),
        LayerSpec("g_out", "activation", {"fn": "sigmoid"}),
    )
    return NetworkSpec(layers, code_shape, ())


def discriminator_spec(in_shape=(3, 32, 32)):
    c, h, w = in_shape
    flat = 48 * (h // 8) * (w // 8)
    layers = (
        LayerSpec("d_conv1", "conv", {"in": c, "out": 16, "k": 3, "stride": 2, "pad": 1}),
        LayerSpec("d_lrelu1", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("d_conv2", "conv", {"in": 16, "out": 32, "k": 3, "stride": 2, "pad": 1}),
        LayerSpec("d_lrelu2", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("d_conv3", "conv", {"in": 32, "out": 48, "k": 3, "stride": 2, "pad": 1}),
        LayerSpec("d_lrelu3", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("d_flat", "flatten"),
        LayerSpec("d_fc1", "dense", {"in": flat, "out": 64}),
        LayerSpec("d_fc1_lrelu", "activation", {"fn": "leaky_relu", "slope": 0.2}),
        LayerSpec("d_logit", "dense", {"in": 64, "out": 1}),
    )
    return NetworkSpec(layers, in_shape, ())


def builtin_specs(in_shape=(3, 32, 32), num_classes=20):
    """Roster of shape-validated built-in network specs."""
    enc_a = encoder_a_spec(in_shape, num_classes)
    return {
        "encoder_a": enc_a,
        "encoder_b": encoder_b_spec(in_shape, num_classes),
        "generator_for": lambda layer: generator_spec(layer, in_shape, enc_a),
        "discriminator": discriminator_spec(in_shape),
        "comparator_layer": COMPARATOR_LAYER,
    }
