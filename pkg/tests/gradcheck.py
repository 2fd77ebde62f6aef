"""Central finite-difference oracle used by the gradient tests."""

import numpy as np

from manlab.numerics import Tensor


def numeric_grad(fn, arrays, index, h):
    """d fn / d arrays[index] by central differences; fn returns a float."""
    base = arrays[index]
    grad = np.zeros_like(base, dtype=np.float64)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(arrays)
        flat[i] = orig - h
        down = fn(arrays)
        flat[i] = orig
        grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def check_op(op, arrays, dtype=np.float64, h=None, seed=0):
    """Max relative error (inf-norm) of analytic vs numeric gradients, over all inputs.

    The scalar probed is sum(op(*inputs) * R) for a fixed random R so every
    output component contributes.
    """
    arrays = [np.array(a, dtype=dtype) for a in arrays]
    h = h if h is not None else (1e-6 if dtype == np.float64 else 1e-2)
    rng = np.random.default_rng(seed)
    probe = {}

    def scalar(arrs):
        out = op(*[Tensor(a, dtype=dtype) for a in arrs])
        if "R" not in probe:
            probe["R"] = rng.standard_normal(out.shape).astype(dtype)
        return float((out.data.astype(np.float64) * probe["R"]).sum())

    scalar(arrays)
    leaves = [Tensor(a.copy(), requires_grad=True, dtype=dtype) for a in arrays]
    out = op(*leaves)
    (out * Tensor(probe["R"], dtype=dtype)).sum().backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        num = numeric_grad(scalar, arrays, i, h)
        ana = leaf.grad.astype(np.float64)
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        worst = max(worst, float(np.abs(num - ana).max() / scale))
    return worst
