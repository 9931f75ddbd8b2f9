"""Fusion passes that collapse decorated blocks into single convolutions.

Batch norm folds into the preceding convolution (homogeneity), parallel
same-shape branches fold by adding kernels (additivity), and a linear chain
of 1x1 convolutions folds into the main kernel by per-tap matrix
multiplication. Gated blocks fold by freezing the per-channel coefficients
computed on the training grid; the result is only valid at that resolution
and the fused model refuses other grid shapes.

Every fused hidden block keeps an identity-statistics batch norm (gamma=1,
beta=0, mu=0, var=1-eps), which evaluates to an exact no-op and preserves
the undecorated architecture and parameter count bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layers import Block, block_forward, positional_encode
from .models import Model, make_coordinate_grid, model_forward
from .ops import BnParams, ConvKernel


@dataclass
class FusionReport:
    pass_name: str
    params_before: int
    params_after: int
    per_block_deviation: list[float]
    max_deviation: float

    def as_text(self) -> str:
        lines = [
            f"fusion_pass={self.pass_name}",
            f"params_before={self.params_before}",
            f"params_after={self.params_after}",
            f"max_deviation={self.max_deviation:.3e}",
        ]
        for i, dev in enumerate(self.per_block_deviation):
            lines.append(f"block{i}_deviation={dev:.3e}")
        return "\n".join(lines) + "\n"


def fold_bn(kern: ConvKernel, bn: BnParams) -> ConvKernel:
    """Absorb frozen statistics and affine parameters into the kernel."""
    if bn.channels != kern.cout:
        raise ValueError(f"bn has {bn.channels} channels, kernel outputs {kern.cout}")
    dtype = kern.dtype
    scale = bn.gamma / np.sqrt(bn.var + dtype.type(bn.eps))
    w = kern.weights * scale
    b = (kern.bias - bn.mu) * scale + bn.beta
    return ConvKernel(w.astype(dtype, copy=False), b.astype(dtype, copy=False))


def fuse_branches(branches: list[ConvKernel]) -> ConvKernel:
    """Sum same-shape kernels; assumes batch norm was already folded in."""
    if not branches:
        raise ValueError("need at least one branch")
    first = branches[0]
    w = first.weights.copy()
    b = first.bias.copy()
    for kern in branches[1:]:
        if kern.weights.shape != first.weights.shape:
            raise ValueError("branch kernel shapes differ")
        w += kern.weights
        b += kern.bias
    return ConvKernel(w, b)


def fuse_pointwise_chain(main: ConvKernel, pw: list[ConvKernel]) -> ConvKernel:
    """Compose 1x1 convolutions into the preceding KxK kernel.

    Each 1x1 kernel is the channel-mixing map y = M z + m; the chain reduces
    to (A, a) with A = M_n ... M_1 applied to every spatial tap.
    """
    cur = main.cout
    for kern in pw:
        if kern.k != 1:
            raise ValueError("chain kernels must be 1x1")
        if kern.cin != cur:
            raise ValueError(f"chain expects {cur} input channels, got {kern.cin}")
        cur = kern.cout
    dtype = main.dtype
    A = np.eye(main.cout, dtype=dtype)
    a = np.zeros(main.cout, dtype=dtype)
    for kern in pw:
        M = kern.weights[0, 0].T  # (cout, cin)
        A = M @ A
        a = M @ a + kern.bias
    w = np.einsum("oc,abic->abio", A, main.weights).astype(dtype, copy=False)
    b = (A @ main.bias + a).astype(dtype, copy=False)
    return ConvKernel(np.ascontiguousarray(w), b)


def _fused_block(kern: ConvKernel, template: Block) -> Block:
    return Block(main=kern,
                 bn_main=BnParams.identity(kern.cout, kern.dtype,
                                           template.bn_main.eps),
                 act=template.act, omega=template.omega)


def _fuse_static_block(block: Block) -> Block:
    if block.decoration == "sr":
        kernels = [fold_bn(block.main, block.bn_main)]
        kernels += [fold_bn(k, bn) for k, bn in block.branches]
        return _fused_block(fuse_branches(kernels), block)
    if block.decoration == "wr":
        k1 = fold_bn(block.main, block.bn_main)
        chain = [fold_bn(k, bn) for k, bn in block.pw_chain]
        return _fused_block(fuse_pointwise_chain(k1, chain), block)
    raise ValueError(f"no static fusion for decoration {block.decoration!r}")


def fuse_dynamic(model: Model, grid: np.ndarray) -> tuple[Model, "FusionReport"]:
    """Freeze gate coefficients on the training grid and fold them into the
    batch-norm-fused kernels. Valid only at that grid; the fused model
    remembers the shape and refuses others."""
    if not any(b.decoration == "dr" for b in model.blocks):
        raise ValueError("model has no dynamic gates")
    return _run_fusion(model, grid, "dr")


def fuse_model(model: Model, grid: np.ndarray | None = None):
    """Collapse whatever decoration the model carries; returns
    (fused model, FusionReport). Undecorated models pass through."""
    decorations = {b.decoration for b in model.blocks} - {"none"}
    if not decorations:
        report = FusionReport("none", model.param_count, model.param_count,
                              [0.0] * len(model.blocks), 0.0)
        return model.copy(), report
    (decoration,) = decorations
    if decoration == "dr" and grid is None:
        raise ValueError("dynamic fusion needs the training grid")
    return _run_fusion(model, grid, decoration)


def _run_fusion(model: Model, grid: np.ndarray | None, decoration: str):
    if not model.stats_captured:
        raise ValueError("batch statistics are not frozen; capture them first")
    if decoration == "dr":
        if grid is None:
            raise ValueError("dynamic fusion needs the training grid")
        if model.train_shape is not None and grid.shape[:2] != tuple(model.train_shape):
            raise ValueError(f"grid {grid.shape[:2]} differs from the training "
                             f"grid {tuple(model.train_shape)}")
        # one pass over the training grid records every gate's coefficients
        _, caches = model_forward(model, grid, mode="train")
        coeffs = [c.get("coeff") if c else None for c in caches]

    if grid is None:
        grid = make_coordinate_grid(16, 16, model.dtype)

    fused_blocks = []
    for i, block in enumerate(model.blocks):
        if block.decoration == "none":
            fused_blocks.append(block.copy())
        elif block.decoration == "dr":
            kern = fold_bn(block.main, block.bn_main)
            cvec = coeffs[i][0, 0]
            kern = ConvKernel(np.ascontiguousarray(kern.weights * cvec),
                              kern.bias * cvec)
            fused_blocks.append(_fused_block(kern, block))
        else:
            fused_blocks.append(_fuse_static_block(block))

    fused = Model(replace(model.spec, decoration="none"), fused_blocks,
                  model.precision, stats_captured=True,
                  train_shape=model.train_shape,
                  locked_shape=grid.shape[:2] if decoration == "dr" else None)

    per_block = _per_block_deviation(model, fused, grid)
    max_dev = verify_equivalence(model, fused, [grid])
    report = FusionReport(decoration, model.param_count, fused.param_count,
                          per_block, max(max_dev, max(per_block, default=0.0)))
    return fused, report


def _per_block_deviation(model: Model, fused: Model, grid: np.ndarray) -> list[float]:
    x = grid.astype(model.dtype, copy=False)
    if model.spec.family == "pe-mlp":
        x = positional_encode(x, model.spec.pe_octaves)
    devs = []
    for orig_block, fused_block in zip(model.blocks, fused.blocks):
        y_orig, _ = block_forward(orig_block, x, mode="eval")
        y_fused, _ = block_forward(fused_block, x, mode="eval")
        devs.append(float(np.max(np.abs(y_orig - y_fused))) if y_orig.size else 0.0)
        x = y_orig
    return devs


def verify_equivalence(model_a: Model, model_b: Model,
                       inputs: list[np.ndarray]) -> float:
    """Maximum absolute output difference between two models in eval mode."""
    if not inputs:
        raise ValueError("need at least one input to compare on")
    worst = 0.0
    for grid in inputs:
        ya, _ = model_forward(model_a, grid, mode="eval")
        yb, _ = model_forward(model_b, grid, mode="eval")
        if ya.shape != yb.shape:
            raise ValueError(f"output shapes differ: {ya.shape} vs {yb.shape}")
        worst = max(worst, float(np.max(np.abs(ya - yb))))
    return worst
