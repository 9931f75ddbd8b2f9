"""Shared test oracles and numerical check helpers.

The oracles here are deliberately dumb and independent of the library's
implementation: scalar loops, two-pass statistics, central finite
differences. Expected values in the test suite come from these, never from
the code under test.
"""
from __future__ import annotations

import numpy as np

from convinr import Block, BnParams, ConvKernel, EXPAND_RATIO


def conv_oracle(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Direct triple-loop convolution in the contract's summation order:
    start from the bias, then add taps in (a, b, ci) lexicographic order,
    rounding each product and each addition in the working precision."""
    H, W, cin = x.shape
    k, cout = kern.k, kern.cout
    p = (k - 1) // 2
    f = x.dtype.type
    xp = np.zeros((H + 2 * p, W + 2 * p, cin), dtype=x.dtype)
    xp[p:p + H, p:p + W] = x
    out = np.empty((H, W, cout), dtype=x.dtype)
    w, bias = kern.weights, kern.bias
    for i in range(H):
        for j in range(W):
            for co in range(cout):
                acc = f(bias[co])
                for a in range(k):
                    for b in range(k):
                        for ci in range(cin):
                            acc = f(acc + f(w[a, b, ci, co] * xp[i + a, j + b, ci]))
                out[i, j, co] = acc
    return out


def two_pass_mean_var(x: np.ndarray):
    """Per-channel statistics over H*W, computed the pedestrian way."""
    H, W, C = x.shape
    n = H * W
    mean = np.zeros(C, dtype=np.float64)
    for c in range(C):
        s = 0.0
        for i in range(H):
            for j in range(W):
                s += float(x[i, j, c])
        mean[c] = s / n
    var = np.zeros(C, dtype=np.float64)
    for c in range(C):
        s = 0.0
        for i in range(H):
            for j in range(W):
                d = float(x[i, j, c]) - mean[c]
                s += d * d
        var[c] = s / n
    return mean, var


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one f64 array."""
    assert x.dtype == np.float64, "finite differences need float64"
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = f()
        flat[idx] = orig - h
        fm = f()
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-2) -> float:
    """Worst-case relative error with a magnitude floor: tiny entries are
    compared at absolute tolerance floor * rtol instead of blowing up."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def scalar_adam_reference(grad_fn, p0: float, steps: int, lr: float,
                          beta1: float = 0.9, beta2: float = 0.999,
                          eps: float = 1e-8) -> list[float]:
    """Textbook scalar Adam in plain Python floats; returns the trajectory."""
    p, m, v = float(p0), 0.0, 0.0
    traj = []
    for t in range(1, steps + 1):
        g = float(grad_fn(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (vhat ** 0.5 + eps)
        traj.append(p)
    return traj


def random_kernel(rng, k: int, cin: int, cout: int, dtype=np.float32,
                  scale: float = 1.0) -> ConvKernel:
    w = (rng.standard_normal((k, k, cin, cout)) * scale).astype(dtype)
    b = (rng.standard_normal(cout) * scale).astype(dtype)
    return ConvKernel(w, b)


def random_tensor(rng, h: int, w: int, c: int, dtype=np.float32) -> np.ndarray:
    return rng.standard_normal((h, w, c)).astype(dtype)


def fresh_bn(c, dtype=np.float32, rng=None) -> BnParams:
    gamma = np.ones(c, dtype) if rng is None else \
        (1 + 0.2 * rng.standard_normal(c)).astype(dtype)
    beta = np.zeros(c, dtype) if rng is None else \
        (0.2 * rng.standard_normal(c)).astype(dtype)
    return BnParams(gamma, beta, np.zeros(c, dtype), np.ones(c, dtype))


def plain_block(rng, cin=3, cout=4, k=3, act="relu", dtype=np.float32,
                bn=True) -> Block:
    return Block(main=random_kernel(rng, k, cin, cout, dtype, scale=0.5),
                 bn_main=fresh_bn(cout, dtype, rng) if bn else None, act=act)


def make_block(rng, decoration, cin=3, cout=4, k=3, dtype=np.float32) -> Block:
    """A randomly parameterized hidden block with the given decoration."""
    block = plain_block(rng, cin, cout, k, dtype=dtype)
    mid = EXPAND_RATIO * cout
    if decoration == "sr":
        block.decoration = "sr"
        block.branches = [(random_kernel(rng, k, cin, cout, dtype, 0.5),
                           fresh_bn(cout, dtype, rng)) for _ in range(2)]
    elif decoration == "wr":
        block.decoration = "wr"
        block.pw_chain = [(random_kernel(rng, 1, cout, mid, dtype, 0.5),
                           fresh_bn(mid, dtype, rng)),
                          (random_kernel(rng, 1, mid, cout, dtype, 0.5),
                           fresh_bn(cout, dtype, rng))]
    elif decoration == "dr":
        block.decoration = "dr"
        block.gate_fc1 = random_kernel(rng, 1, cout, mid, dtype, 0.5)
        block.gate_fc2 = random_kernel(rng, 1, mid, cout, dtype, 0.5)
    block.__post_init__()
    return block
