"""Central finite-difference gradient oracle, independent of the autodiff path.

The oracle only ever calls the forward computation; comparisons run in
float64 so the check measures the math, not float32 rounding.
"""

import numpy as np

from dgnam.tensor import Tensor


def numeric_grad(f, x, eps=1e-3):
    """Central differences of scalar-valued f at float64 array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def check_gradients(build, arrays, eps=1e-3, tol=1e-3):
    """build(tensors) -> scalar Tensor. Checks every input's gradient.

    Returns the worst relative error across all inputs.
    """
    tensors = [Tensor(a.astype(np.float64), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build(tensors)
    loss.backward()
    worst = 0.0
    for k, t in enumerate(tensors):

        def f(x, k=k):
            probe = [Tensor(a.data.copy(), dtype=np.float64) for a in tensors]
            probe[k] = Tensor(x, dtype=np.float64)
            return float(build(probe).data)

        num = numeric_grad(f, t.data, eps)
        worst = max(worst, rel_err(t.grad, num))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e} >= {tol}"
    return worst
