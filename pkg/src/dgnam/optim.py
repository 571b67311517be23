"""Parameter update rules. Updates mutate tensor data in place and are
deterministic given identical parameters, gradients, and state."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def sgd_step(params, lr, momentum=0.0, state=None):
    """One SGD step over a list of tensors with populated grads.

    With momentum > 0, `state` holds per-parameter velocity buffers and is
    created on first use. Returns the state for reuse.
    """
    if lr <= 0:
        raise InputError(f"learning rate must be positive, got {lr}")
    if momentum and state is None:
        state = [np.zeros_like(p.data) for p in params]
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        if momentum:
            state[i] = momentum * state[i] + g
            g = state[i]
        p.data -= lr * g
    return state


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    if lr <= 0:
        raise InputError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return state
