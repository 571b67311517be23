"""Dense tensors with reverse-mode automatic differentiation.

Values are float32 by default and laid out row-major; image batches use NCHW.
Every differentiable op records a closure on the implicit tape (the graph of
`_parents` links); `backward(loss)` topologically sorts that graph and fills
`grad` on every reachable tensor, overwriting grads from previous calls.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError

__all__ = [
    "Tensor",
    "conv2d",
    "conv2d_transpose",
    "dense",
    "max_pool2d",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "softmax_cross_entropy",
    "mse",
    "bce_logits",
    "backward",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is not None:
            data = np.asarray(data, dtype=dtype)
        else:
            data = np.asarray(data)
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self):
        return sum_all(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def backward(self):
        backward(self)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    out._parents = tuple(parents)
    out._backward = backward_fn
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    # reduce a broadcast gradient back to `shape`
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    out = _make(a.data + b.data, (a, b), None)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    out._backward = back
    return out


def sub(a, b):
    out = _make(a.data - b.data, (a, b), None)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    out._backward = back
    return out


def mul(a, b):
    out = _make(a.data * b.data, (a, b), None)

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    out._backward = back
    return out


def mul_scalar(a, s):
    s = float(s)
    out = _make(a.data * s, (a,), None)

    def back(g):
        _accum(a, g * s)

    out._backward = back
    return out


def reshape(a, shape):
    out = _make(a.data.reshape(shape), (a,), None)

    def back(g):
        _accum(a, g.reshape(a.shape))

    out._backward = back
    return out


def sum_all(a):
    out = _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), None)

    def back(g):
        _accum(a, np.full(a.shape, g, dtype=a.dtype))

    out._backward = back
    return out


def mean_all(a):
    n = a.data.size
    out = _make(np.asarray(a.data.mean(), dtype=a.dtype), (a,), None)

    def back(g):
        _accum(a, np.full(a.shape, g / n, dtype=a.dtype))

    out._backward = back
    return out


def sum_squares(a):
    out = _make(np.asarray((a.data * a.data).sum(), dtype=a.dtype), (a,), None)

    def back(g):
        _accum(a, 2.0 * g * a.data)

    out._backward = back
    return out


def sqrt(a):
    y = np.sqrt(a.data)
    out = _make(y, (a,), None)

    def back(g):
        _accum(a, g / (2.0 * np.maximum(y, np.finfo(a.dtype).tiny)))

    out._backward = back
    return out


def absolute(a):
    out = _make(np.abs(a.data), (a,), None)

    def back(g):
        _accum(a, g * np.sign(a.data))

    out._backward = back
    return out


def pick(a, index):
    """Select a single element as a differentiable scalar."""
    out = _make(np.asarray(a.data[index], dtype=a.dtype), (a,), None)

    def back(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[index] = g
        _accum(a, full)

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# activations

def relu(a):
    out = _make(np.maximum(a.data, 0), (a,), None)

    def back(g):
        _accum(a, g * (a.data > 0))

    out._backward = back
    return out


def leaky_relu(a, slope=0.01):
    slope = float(slope)
    out = _make(np.where(a.data > 0, a.data, a.data * slope), (a,), None)

    def back(g):
        _accum(a, g * np.where(a.data > 0, 1.0, slope).astype(a.dtype))

    out._backward = back
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = _make(y, (a,), None)

    def back(g):
        _accum(a, g * (1.0 - y * y))

    out._backward = back
    return out


def sigmoid(a):
    y = _sigmoid(a.data)
    out = _make(y, (a,), None)

    def back(g):
        _accum(a, g * y * (1.0 - y))

    out._backward = back
    return out


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# linear layers

def dense(x, weight, bias):
    """out[n, j] = sum_i x[n, i] * weight[j, i] + bias[j]"""
    if x.data.ndim != 2:
        raise DimensionError(f"dense expects 2-d input, got shape {x.shape}")
    if weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"dense inner axis mismatch: input axis 1 is {x.shape[1]}, "
            f"weight axis 1 is {weight.shape[1] if weight.data.ndim == 2 else weight.shape}"
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense bias axis 0 must be {weight.shape[0]}, got {bias.shape}")
    out = _make(x.data @ weight.data.T + bias.data, (x, weight, bias), None)

    def back(g):
        _accum(x, g @ weight.data)
        _accum(weight, g.T @ x.data)
        _accum(bias, g.sum(axis=0))

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# convolution

def _conv_out_extent(n, k, stride, pad, axis_name):
    m = n + 2 * pad - k
    if m < 0:
        raise DimensionError(f"kernel exceeds padded input along axis {axis_name}: {k} > {n + 2 * pad}")
    return m // stride + 1


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols, xshape, kh, kw, stride, pad):
    n, c, h, w = xshape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def _check_conv_args(x, weight, bias, stride):
    if x.data.ndim != 4:
        raise DimensionError(f"expected 4-d NCHW input, got shape {x.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(f"expected 4-d kernel, got shape {weight.shape}")
    if stride < 1:
        raise InputError(f"stride must be >= 1, got {stride}")


def conv2d(x, weight, bias, stride=1, pad=0):
    """Cross-correlation of NCHW input with [K, C, kh, kw] kernels."""
    _check_conv_args(x, weight, bias, stride)
    n, c, h, w = x.shape
    k, cw, kh, kw = weight.shape
    if cw != c:
        raise DimensionError(f"conv2d channel axis mismatch: input has {c}, weight expects {cw}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d bias axis 0 must be {k}, got {bias.shape}")
    ho = _conv_out_extent(h, kh, stride, pad, "H")
    wo = _conv_out_extent(w, kw, stride, pad, "W")

    cols = _im2col(x.data, kh, kw, stride, pad)  # [N, C*kh*kw, L]
    w2 = weight.data.reshape(k, -1)
    y = np.matmul(w2, cols) + bias.data[:, None]
    out = _make(y.reshape(n, k, ho, wo), (x, weight, bias), None)

    def back(g):
        g2 = g.reshape(n, k, ho * wo)
        _accum(x, _col2im(np.matmul(w2.T, g2), x.shape, kh, kw, stride, pad))
        dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
        _accum(weight, dw.reshape(weight.shape))
        _accum(bias, g.sum(axis=(0, 2, 3)))

    out._backward = back
    return out


def conv2d_transpose(x, weight, bias, stride=1, pad=0):
    """Adjoint of conv2d: input [N, K, H, W], kernel [K, C, kh, kw] -> [N, C, H'', W'']."""
    _check_conv_args(x, weight, bias, stride)
    n, k, h, w = x.shape
    kw_in, c, kh, kw_ = weight.shape
    if kw_in != k:
        raise DimensionError(f"conv2d_transpose channel axis mismatch: input has {k}, weight expects {kw_in}")
    if bias.shape != (c,):
        raise DimensionError(f"conv2d_transpose bias axis 0 must be {c}, got {bias.shape}")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (w - 1) * stride - 2 * pad + kw_
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d_transpose output extent not positive: ({ho}, {wo})")

    w2 = weight.data.reshape(k, -1)  # [K, C*kh*kw]
    x2 = x.data.reshape(n, k, h * w)
    y = _col2im(np.matmul(w2.T, x2), (n, c, ho, wo), kh, kw_, stride, pad)
    y += bias.data[None, :, None, None]
    out = _make(y, (x, weight, bias), None)

    def back(g):
        gcols = _im2col(g, kh, kw_, stride, pad)  # [N, C*kh*kw, H*W]
        _accum(x, np.matmul(w2, gcols).reshape(x.shape))
        dw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0)
        _accum(weight, dw.reshape(weight.shape))
        _accum(bias, g.sum(axis=(0, 2, 3)))

    out._backward = back
    return out


def max_pool2d(x, k=2):
    """Non-overlapping max pooling with window and stride k; extents must divide."""
    if x.data.ndim != 4:
        raise DimensionError(f"expected 4-d NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"pool window {k} must divide spatial extents ({h}, {w})")
    ho, wo = h // k, w // k
    win = x.data.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    out = _make(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], (x,), None)

    def back(g):
        gw = np.zeros((n, c, ho, wo, k * k), dtype=x.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        _accum(x, gw.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape))

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# losses (scalar outputs, mean-reduced)

def softmax_cross_entropy(logits, labels):
    if logits.data.ndim != 2:
        raise DimensionError(f"expected 2-d logits, got shape {logits.shape}")
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    out = _make(np.asarray(loss, dtype=logits.dtype), (logits,), None)

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, (g / n) * p)

    out._backward = back
    return out


def mse(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = _make(np.asarray((d * d).mean(), dtype=a.dtype), (a, b), None)

    def back(g):
        s = 2.0 * g / d.size
        _accum(a, s * d)
        _accum(b, -s * d)

    out._backward = back
    return out


def bce_logits(logits, target):
    """Binary cross-entropy over logits, mean-reduced; target in [0, 1]."""
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape not in ((), logits.shape):
        raise DimensionError(f"bce target shape {t.shape} incompatible with logits {logits.shape}")
    z = logits.data
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    out = _make(np.asarray(loss, dtype=logits.dtype), (logits,), None)

    def back(g):
        _accum(logits, (g / z.size) * (_sigmoid(z) - t))

    out._backward = back
    return out


# ---------------------------------------------------------------------------
# backward pass

def backward(loss):
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise InputError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    # grads are overwritten per backward call, never accumulated across calls
    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
