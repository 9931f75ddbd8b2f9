"""Network blocks and their backward passes.

A hidden block is one convolution plus optional batch norm and activation,
optionally decorated with extra training-time structure that a fusion pass
can later fold away:

    'none'  y = act(bn(conv(x)))
    'sr'    y = act(sum of three parallel conv+bn branches)
    'wr'    y = act(bn2(pw2(bn1(pw1(bn0(conv(x)))))))   pointwise pair C->4C->C
    'dr'    h = bn(conv(x)); y = act(h * sigmoid_gate(pooled h))

The pointwise chain is deliberately linear (no activation inside), which is
what makes it fusable into the main kernel. The gate follows the usual
squeeze-excitation pair: ReLU after the expanding 1x1, sigmoid producing the
per-channel coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import (BnParams, ConvKernel, activation_backward, activation_forward,
                  batchnorm_backward, batchnorm_forward, channel_scale,
                  channel_scale_backward, check_tensor, conv2d_backward,
                  conv2d_forward, global_avg_pool, global_avg_pool_backward,
                  sigmoid)

DECORATIONS = ("none", "sr", "wr", "dr")
EXPAND_RATIO = 4


@dataclass
class Block:
    main: ConvKernel
    bn_main: BnParams | None = None
    act: str | None = None
    omega: float = 1.0
    decoration: str = "none"
    branches: list = field(default_factory=list)    # sr: [(ConvKernel, BnParams)] * 2
    pw_chain: list = field(default_factory=list)    # wr: [(C->4C, bn), (4C->C, bn)]
    gate_fc1: ConvKernel | None = None              # dr: 1x1, C -> 4C
    gate_fc2: ConvKernel | None = None              # dr: 1x1, 4C -> C

    def __post_init__(self):
        if self.decoration not in DECORATIONS:
            raise ValueError(f"unknown decoration {self.decoration!r}")
        if self.decoration != "none" and self.bn_main is None:
            raise ValueError("decorated blocks require batch norm")
        c = self.main.cout
        if self.decoration == "sr":
            if len(self.branches) != 2:
                raise ValueError("sr blocks carry exactly two extra branches")
            for kern, bn in self.branches:
                if (kern.k, kern.cin, kern.cout) != (self.main.k, self.main.cin, c):
                    raise ValueError("sr branches must match the main kernel shape")
                if bn.channels != c:
                    raise ValueError("sr branch bn channel mismatch")
        elif self.decoration == "wr":
            if len(self.pw_chain) != 2:
                raise ValueError("wr blocks carry exactly two pointwise layers")
            (k1, bn1), (k2, bn2) = self.pw_chain
            if k1.k != 1 or k2.k != 1:
                raise ValueError("wr chain kernels must be 1x1")
            if (k1.cin, k1.cout) != (c, EXPAND_RATIO * c) or \
               (k2.cin, k2.cout) != (EXPAND_RATIO * c, c):
                raise ValueError(f"wr chain must be [{c}->{EXPAND_RATIO * c}, "
                                 f"{EXPAND_RATIO * c}->{c}]")
            if bn1.channels != k1.cout or bn2.channels != k2.cout:
                raise ValueError("wr chain bn channel mismatch")
        elif self.decoration == "dr":
            f1, f2 = self.gate_fc1, self.gate_fc2
            if f1 is None or f2 is None:
                raise ValueError("dr blocks need both gate kernels")
            if f1.k != 1 or f2.k != 1:
                raise ValueError("gate kernels must be 1x1")
            if (f1.cin, f1.cout) != (c, EXPAND_RATIO * c) or \
               (f2.cin, f2.cout) != (EXPAND_RATIO * c, c):
                raise ValueError("gate must expand to "
                                 f"{EXPAND_RATIO}x and project back to {c}")

    @property
    def cin(self) -> int:
        return self.main.cin

    @property
    def cout(self) -> int:
        return self.main.cout

    def copy(self) -> "Block":
        return Block(
            main=self.main.copy(),
            bn_main=self.bn_main.copy() if self.bn_main is not None else None,
            act=self.act, omega=self.omega, decoration=self.decoration,
            branches=[(k.copy(), bn.copy()) for k, bn in self.branches],
            pw_chain=[(k.copy(), bn.copy()) for k, bn in self.pw_chain],
            gate_fc1=self.gate_fc1.copy() if self.gate_fc1 is not None else None,
            gate_fc2=self.gate_fc2.copy() if self.gate_fc2 is not None else None,
        )


def block_params(block: Block) -> list[tuple[str, np.ndarray]]:
    """Learned arrays in a fixed order (the order Adam and checkpoints use)."""
    out = [("main.w", block.main.weights), ("main.b", block.main.bias)]
    if block.bn_main is not None:
        out += [("bn.gamma", block.bn_main.gamma), ("bn.beta", block.bn_main.beta)]
    for i, (kern, bn) in enumerate(block.branches, start=1):
        out += [(f"br{i}.w", kern.weights), (f"br{i}.b", kern.bias),
                (f"br{i}.bn.gamma", bn.gamma), (f"br{i}.bn.beta", bn.beta)]
    for i, (kern, bn) in enumerate(block.pw_chain):
        out += [(f"pw{i}.w", kern.weights), (f"pw{i}.b", kern.bias),
                (f"pw{i}.bn.gamma", bn.gamma), (f"pw{i}.bn.beta", bn.beta)]
    if block.gate_fc1 is not None:
        out += [("gate1.w", block.gate_fc1.weights), ("gate1.b", block.gate_fc1.bias),
                ("gate2.w", block.gate_fc2.weights), ("gate2.b", block.gate_fc2.bias)]
    return out


def _bn_apply(x, bn: BnParams, mode: str):
    return batchnorm_forward(x, bn.gamma, bn.beta, bn.eps, mode,
                             frozen=bn if mode == "eval" else None)


def block_forward(block: Block, x: np.ndarray, mode: str = "train"):
    """Run one block; returns (y, cache). The cache feeds block_backward and
    holds the batch statistics seen during a train-mode pass; eval-mode calls
    return cache=None."""
    check_tensor(x, "x")
    if x.shape[2] != block.main.cin:
        raise ValueError(f"block expects {block.main.cin} channels, got {x.shape[2]}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    cache: dict | None = {"x": x} if train else None

    if block.decoration == "sr":
        z = conv2d_forward(x, block.main)
        h, stats = _bn_apply(z, block.bn_main, mode)
        branch_caches = []
        pre = h
        for kern, bn in block.branches:
            zb = conv2d_forward(x, kern)
            hb, sb = _bn_apply(zb, bn, mode)
            branch_caches.append({"z": zb, "stats": sb})
            pre = pre + hb
        if train:
            cache.update(z=z, stats=stats, branch_caches=branch_caches)
    elif block.decoration == "wr":
        z = conv2d_forward(x, block.main)
        h, stats = _bn_apply(z, block.bn_main, mode)
        pw_caches = []
        cur = h
        for kern, bn in block.pw_chain:
            zc = conv2d_forward(cur, kern)
            hc, sc = _bn_apply(zc, bn, mode)
            pw_caches.append({"x": cur, "z": zc, "stats": sc})
            cur = hc
        pre = cur
        if train:
            cache.update(z=z, stats=stats, pw_caches=pw_caches)
    elif block.decoration == "dr":
        z = conv2d_forward(x, block.main)
        h, stats = _bn_apply(z, block.bn_main, mode)
        p = global_avg_pool(h)
        u = conv2d_forward(p, block.gate_fc1)
        r = activation_forward(u, "relu")
        v = conv2d_forward(r, block.gate_fc2)
        coeff = sigmoid(v)
        pre = channel_scale(h, coeff[0, 0])
        if train:
            cache.update(z=z, stats=stats, h=h, p=p, u=u, r=r, coeff=coeff)
    else:
        z = conv2d_forward(x, block.main)
        if block.bn_main is not None:
            pre, stats = _bn_apply(z, block.bn_main, mode)
            if train:
                cache.update(z=z, stats=stats)
        else:
            pre = z
            if train:
                cache["z"] = z

    if train:
        cache["pre"] = pre
    y = activation_forward(pre, block.act, block.omega) if block.act else pre
    return y, cache


def block_backward(block: Block, cache: dict, grad_y: np.ndarray,
                   need_grad_x: bool = True):
    """Exact gradients through whichever decoration is active.

    Returns (grad_x, grads) with grads keyed like block_params names."""
    if cache is None:
        raise ValueError("no cache: block_backward needs a train-mode forward")
    x = cache["x"]
    if grad_y.shape != (x.shape[0], x.shape[1], block.main.cout):
        raise ValueError("grad_y shape does not match the block output")
    grads: dict[str, np.ndarray] = {}
    gpre = (activation_backward(grad_y, cache["pre"], block.act, block.omega)
            if block.act else grad_y)

    def back_conv_bn(gh, z, kern, bn, inp, conv_key, bn_key, want_gx, stats):
        if bn is not None:
            gz, ggamma, gbeta = batchnorm_backward(gh, z, bn.gamma, bn.eps,
                                                   stats=stats)
            grads[bn_key + "gamma"] = ggamma
            grads[bn_key + "beta"] = gbeta
        else:
            gz = gh
        gx, gw, gb = conv2d_backward(gz, inp, kern, need_grad_x=want_gx)
        grads[conv_key + "w"] = gw
        grads[conv_key + "b"] = gb
        return gx

    if block.decoration == "sr":
        gx = back_conv_bn(gpre, cache["z"], block.main, block.bn_main, x,
                          "main.", "bn.", need_grad_x, cache["stats"])
        for i, ((kern, bn), bc) in enumerate(zip(block.branches,
                                                 cache["branch_caches"]), start=1):
            gxb = back_conv_bn(gpre, bc["z"], kern, bn, x,
                               f"br{i}.", f"br{i}.bn.", need_grad_x, bc["stats"])
            if need_grad_x:
                gx = gx + gxb
        return gx, grads

    if block.decoration == "wr":
        g = gpre
        for i in reversed(range(len(block.pw_chain))):
            kern, bn = block.pw_chain[i]
            pc = cache["pw_caches"][i]
            g = back_conv_bn(g, pc["z"], kern, bn, pc["x"],
                             f"pw{i}.", f"pw{i}.bn.", True, pc["stats"])
        gx = back_conv_bn(g, cache["z"], block.main, block.bn_main, x,
                          "main.", "bn.", need_grad_x, cache["stats"])
        return gx, grads

    if block.decoration == "dr":
        h, coeff = cache["h"], cache["coeff"]
        gh_scale, gcoeff = channel_scale_backward(gpre, h, coeff[0, 0])
        gv = (gcoeff * (coeff[0, 0] * (1 - coeff[0, 0]))).reshape(1, 1, -1)
        gr, gw2, gb2 = conv2d_backward(gv, cache["r"], block.gate_fc2)
        grads["gate2.w"], grads["gate2.b"] = gw2, gb2
        gu = activation_backward(gr, cache["u"], "relu")
        gp, gw1, gb1 = conv2d_backward(gu, cache["p"], block.gate_fc1)
        grads["gate1.w"], grads["gate1.b"] = gw1, gb1
        gh = gh_scale + global_avg_pool_backward(gp, h.shape[0], h.shape[1])
        gx = back_conv_bn(gh, cache["z"], block.main, block.bn_main, x,
                          "main.", "bn.", need_grad_x, cache["stats"])
        return gx, grads

    gx = back_conv_bn(gpre, cache["z"], block.main, block.bn_main, x,
                      "main.", "bn.", need_grad_x, cache.get("stats"))
    return gx, grads


def positional_encode(grid: np.ndarray, octaves: int) -> np.ndarray:
    """Lift coordinates through sin/cos at frequencies pi * 2^j.

    Channel order: sines for axis 0 (octaves 0..J-1), sines for axis 1, then
    cosines in the same order; 4 * octaves channels for a 2-channel grid.
    """
    check_tensor(grid, "grid")
    if grid.shape[2] != 2:
        raise ValueError(f"expected a 2-channel coordinate grid, got {grid.shape[2]}")
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    H, W, naxes = grid.shape
    freqs = (np.pi * (2.0 ** np.arange(octaves))).astype(grid.dtype)
    # (H, W, axis, octave) angles flattened axis-major, octave-minor
    ang = grid[:, :, :, None] * freqs
    ang = ang.reshape(H, W, naxes * octaves)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=2)
