"""Shared test utilities: central-difference gradient checking.

The checker treats the graph engine as a black box. A builder function
maps plain arrays to a scalar loss tensor; analytic gradients come from
one backward pass and are compared coordinate by coordinate against
central differences of the builder re-evaluated on perturbed copies.
"""

import numpy as np

from kdlab.autograd import (Tensor, backward, cross_entropy, div, kl_alignment,
                            matmul, mse, mul, neg, relu, sigmoid, slice_rows,
                            softmax, log, sqrt, sub, tensor_mean, tensor_sum)

EPS = 1e-6


def gradcheck(build, arrays, eps=EPS):
    """Largest relative gradient error over every input coordinate.

    ``build`` takes one Tensor per array and returns a scalar Tensor.
    The relative error for a coordinate is |num - ana| scaled by
    max(1, |num|, |ana|), so tiny gradients are compared absolutely.
    """
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    backward(build(*tensors))
    worst = 0.0
    for k, base in enumerate(arrays):
        analytic = tensors[k].grad.reshape(-1)
        flat = base.reshape(-1)
        for i in range(flat.size):
            bumped = [a.copy() for a in arrays]
            bumped[k].reshape(-1)[i] = flat[i] + eps
            hi = build(*[Tensor(a) for a in bumped]).item()
            bumped[k].reshape(-1)[i] = flat[i] - eps
            lo = build(*[Tensor(a) for a in bumped]).item()
            num = (hi - lo) / (2.0 * eps)
            err = abs(num - analytic[i]) / max(1.0, abs(num), abs(analytic[i]))
            worst = max(worst, err)
    return worst


def _mix(t, w):
    # Reduce through a fixed weight so every coordinate's gradient differs.
    return tensor_sum(mul(t, Tensor(w)))


def _away_from(x, gap):
    # Push values out of a band around zero; keeps kinked ops smooth
    # along the whole finite-difference probe.
    s = np.where(x >= 0.0, 1.0, -1.0)
    return x + s * gap


def op_instance(name, rng):
    """One random (build, arrays) pair exercising the named op."""
    n, m, k = rng.integers(2, 5, size=3)
    w = rng.standard_normal((n, m))
    if name == "add":
        b = rng.standard_normal((n, m) if rng.random() < 0.5 else (m,))
        return (lambda a, c: _mix(a + c, w)), [rng.standard_normal((n, m)), b]
    if name == "sub":
        b = rng.standard_normal((n, m) if rng.random() < 0.5 else (m,))
        return (lambda a, c: _mix(sub(a, c), w)), [rng.standard_normal((n, m)), b]
    if name == "mul":
        b = rng.standard_normal((n, m) if rng.random() < 0.5 else (m,))
        return (lambda a, c: _mix(mul(a, c), w)), [rng.standard_normal((n, m)), b]
    if name == "div":
        d = _away_from(rng.standard_normal((n, m)), 0.5)
        return (lambda a, c: _mix(div(a, c), w)), [rng.standard_normal((n, m)), d]
    if name == "neg":
        return (lambda a: _mix(neg(a), w)), [rng.standard_normal((n, m))]
    if name == "matmul":
        wk = rng.standard_normal((n, k))
        return (lambda a, b: tensor_sum(mul(matmul(a, b), Tensor(wk)))), \
            [rng.standard_normal((n, m)), rng.standard_normal((m, k))]
    if name == "relu":
        x = _away_from(rng.standard_normal((n, m)), 0.1)
        return (lambda a: _mix(relu(a), w)), [x]
    if name == "sigmoid":
        return (lambda a: _mix(sigmoid(a), w)), [rng.standard_normal((n, m))]
    if name == "log":
        return (lambda a: _mix(log(a), w)), [rng.uniform(0.1, 3.0, (n, m))]
    if name == "sqrt":
        return (lambda a: _mix(sqrt(a), w)), [rng.uniform(0.1, 4.0, (n, m))]
    if name == "softmax":
        return (lambda a: _mix(softmax(a), w)), [rng.uniform(-3, 3, (n, m))]
    if name == "sum":
        axis = rng.choice([None, 0, 1])
        if axis is None:
            return (lambda a: tensor_sum(a)), [rng.standard_normal((n, m))]
        ww = rng.standard_normal(m if axis == 0 else n)
        return (lambda a: _mix(tensor_sum(a, axis=axis), ww)), \
            [rng.standard_normal((n, m))]
    if name == "mean":
        axis = rng.choice([None, 0, 1])
        if axis is None:
            return (lambda a: tensor_mean(a)), [rng.standard_normal((n, m))]
        ww = rng.standard_normal(m if axis == 0 else n)
        return (lambda a: _mix(tensor_mean(a, axis=axis), ww)), \
            [rng.standard_normal((n, m))]
    if name == "slice_rows":
        rows = int(n) + 2
        start = int(rng.integers(0, rows - 1))
        stop = int(rng.integers(start + 1, rows + 1))
        ws = rng.standard_normal((stop - start, m))
        return (lambda a: _mix(slice_rows(a, start, stop), ws)), \
            [rng.standard_normal((rows, m))]
    if name == "cross_entropy":
        y = np.zeros((n, m))
        y[np.arange(n), rng.integers(0, m, n)] = 1.0
        return (lambda z: cross_entropy(softmax(z), Tensor(y))), \
            [rng.uniform(-3, 3, (n, m))]
    if name == "kl_alignment":
        t = rng.uniform(0.2, 1.0, (n, m))
        t /= t.sum(axis=1, keepdims=True)
        return (lambda z: kl_alignment(Tensor(t), softmax(z))), \
            [rng.uniform(-3, 3, (n, m))]
    if name == "mse":
        return (lambda a, b: mse(a, b)), \
            [rng.standard_normal((n, m)), rng.standard_normal((n, m))]
    raise ValueError(f"op_instance: unknown op {name!r}")


CHECKED_OPS = ("add", "sub", "mul", "div", "neg", "matmul", "relu", "sigmoid",
               "log", "sqrt", "softmax", "sum", "mean", "slice_rows",
               "cross_entropy", "kl_alignment", "mse")


def sweep_ops(seed, instances_per_op):
    """Gradcheck every differentiable op; returns {op: worst error}."""
    worst = {}
    for op_id, name in enumerate(CHECKED_OPS):
        rng = np.random.default_rng([seed, op_id])
        errs = [gradcheck(*op_instance(name, rng))
                for _ in range(instances_per_op)]
        worst[name] = max(errs)
    return worst
