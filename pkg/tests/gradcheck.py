"""Finite-difference gradient oracle shared by the unit and acceptance tests.

Central differences with step 1e-5 on float64 give truncation + rounding
error around 1e-10 for O(1) values, far below the 1e-4 acceptance bar.
"""

import numpy as np

from segrl import tensor as T

FD_STEP = 1e-5


def numeric_grad(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """d f / d x by central differences; f maps ndarray -> float."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = f(x)
        flat[i] = keep - step
        lo = f(x)
        flat[i] = keep
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise relative error with a small-denominator floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_op(build, inputs: list[np.ndarray], seed_grads: bool = False) -> float:
    """Gradcheck one op composition.

    build(*DiffTensors) must return a DiffTensor; a scalar loss sum(out * w)
    with fixed random w makes every output element matter. Returns the max
    relative error over all inputs.
    """
    rng = np.random.default_rng(0)
    leaves = [T.DiffTensor(x.copy(), requires_grad=True) for x in inputs]
    out = build(*leaves)
    w = rng.standard_normal(out.shape)
    loss = T.sum_(T.mul(out, w))
    T.backward(loss)
    worst = 0.0
    for k, leaf in enumerate(leaves):
        def f(x, k=k):
            vals = [inp.copy() for inp in inputs]
            vals[k] = x
            with T.inference_mode():
                consts = [T.DiffTensor(v) for v in vals]
                o = build(*consts)
                return float(np.sum(o.data * w))
        num = numeric_grad(f, inputs[k].copy())
        got = leaf.grad if leaf.grad is not None else np.zeros_like(inputs[k])
        worst = max(worst, rel_err(got, num))
    T.reset_graph()
    return worst
