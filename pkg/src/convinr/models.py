"""Model construction and whole-network forward/backward.

Four families share the same block machinery:

    mlp       1x1 convolutions (pixelwise linear layers), ReLU, no norm
    pe-mlp    mlp on sin/cos-encoded coordinates
    siren     1x1 convolutions with sine activations and matched init
    conv-inr  KxK convolutions with batch norm and ReLU

A model is `depth` hidden blocks followed by one bare output convolution
(no norm, no activation). Outputs are clamped to [0, 1] only when rendering
for export, never inside the training loss.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .layers import Block, EXPAND_RATIO, block_backward, block_forward, block_params, \
    positional_encode
from .ops import BnParams, ConvKernel, check_tensor
from .rng import SeededRng

FAMILIES = ("mlp", "pe-mlp", "siren", "conv-inr")
BN_EPS = 1e-5


class LockedShapeError(ValueError):
    """Raised when a resolution-locked model is evaluated off its grid."""


@dataclass
class ModelSpec:
    family: str
    depth: int = 10
    width: int = 32
    kernel: int | None = None
    decoration: str = "none"
    pe_octaves: int = 10
    omega0: float = 30.0
    in_channels: int = 2
    out_channels: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if self.kernel is None:
            self.kernel = 3 if self.family == "conv-inr" else 1
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd and positive")
        if self.family != "conv-inr":
            if self.kernel != 1:
                raise ValueError(f"{self.family} uses 1x1 kernels only")
            if self.decoration != "none":
                raise ValueError("decorations apply to conv-inr only")
        if self.pe_octaves < 1:
            raise ValueError("pe_octaves must be >= 1")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def net_in_channels(self) -> int:
        """Channels the first convolution sees (after any encoding)."""
        if self.family == "pe-mlp":
            return 2 * 2 * self.pe_octaves
        return self.in_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    blocks: list[Block]
    precision: int = 32
    stats_captured: bool = False
    locked_shape: tuple[int, int] | None = None
    train_shape: tuple[int, int] | None = None

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, block in enumerate(self.blocks):
            out += [(f"b{i}.{name}", arr) for name, arr in block_params(block)]
        return out

    @property
    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    def copy(self) -> "Model":
        return Model(self.spec, [b.copy() for b in self.blocks], self.precision,
                     self.stats_captured, self.locked_shape, self.train_shape)


def make_coordinate_grid(height: int, width: int, dtype=np.float32) -> np.ndarray:
    """Pixel-center coordinates in (-1, 1): channel 0 is x (along width),
    channel 1 is y (along height)."""
    if height < 1 or width < 1:
        raise ValueError("grid dimensions must be positive")
    xs = (-1.0 + 2.0 * (np.arange(width) + 0.5) / width).astype(dtype)
    ys = (-1.0 + 2.0 * (np.arange(height) + 0.5) / height).astype(dtype)
    grid = np.empty((height, width, 2), dtype=dtype)
    grid[:, :, 0] = xs[None, :]
    grid[:, :, 1] = ys[:, None]
    return grid


def _lecun_bound(fan_in: int) -> float:
    return float(np.sqrt(3.0 / fan_in))


def _draw_kernel(rng: SeededRng, k: int, cin: int, cout: int, bound: float,
                 dtype) -> ConvKernel:
    w = rng.uniform(-bound, bound, size=(k, k, cin, cout)).astype(dtype)
    return ConvKernel(w, np.zeros(cout, dtype=dtype))


def build_model(spec: ModelSpec, rng: SeededRng, precision: int = 32) -> Model:
    """Initialize a model; draws depend only on the rng stream position.

    LeCun init draws uniformly on (-sqrt(3/fan_in), sqrt(3/fan_in)) with
    fan_in = k*k*cin; siren uses (-1/fan_in, 1/fan_in) for the first layer
    and (-sqrt(6/fan_in)/omega0, ...) elsewhere. Biases start at zero,
    batch-norm affine at gamma=1, beta=0.
    """
    if precision not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    dtype = np.float32 if precision == 32 else np.float64
    k = spec.kernel
    widths = [spec.net_in_channels] + [spec.width] * spec.depth + [spec.out_channels]
    is_conv = spec.family == "conv-inr"
    act = {"mlp": "relu", "pe-mlp": "relu", "siren": "sine", "conv-inr": "relu"}[spec.family]

    def bound_for(layer_idx: int, fan_in: int) -> float:
        if spec.family == "siren":
            if layer_idx == 0:
                return 1.0 / fan_in
            return float(np.sqrt(6.0 / fan_in)) / spec.omega0
        return _lecun_bound(fan_in)

    blocks = []
    for i in range(spec.depth + 1):
        cin, cout = widths[i], widths[i + 1]
        main = _draw_kernel(rng, k, cin, cout, bound_for(i, k * k * cin), dtype)
        if i == spec.depth:
            blocks.append(Block(main=main))
            continue
        branches, pw_chain, gate1, gate2 = [], [], None, None
        mid = EXPAND_RATIO * cout
        if spec.decoration == "sr":
            branches = [
                (_draw_kernel(rng, k, cin, cout, _lecun_bound(k * k * cin), dtype),
                 _fresh_bn(cout, dtype)) for _ in range(2)]
        elif spec.decoration == "wr":
            pw_chain = [
                (_draw_kernel(rng, 1, cout, mid, _lecun_bound(cout), dtype),
                 _fresh_bn(mid, dtype)),
                (_draw_kernel(rng, 1, mid, cout, _lecun_bound(mid), dtype),
                 _fresh_bn(cout, dtype))]
        elif spec.decoration == "dr":
            gate1 = _draw_kernel(rng, 1, cout, mid, _lecun_bound(cout), dtype)
            gate2 = _draw_kernel(rng, 1, mid, cout, _lecun_bound(mid), dtype)
        blocks.append(Block(
            main=main,
            bn_main=_fresh_bn(cout, dtype) if is_conv else None,
            act=act,
            omega=spec.omega0 if act == "sine" else 1.0,
            decoration=spec.decoration,
            branches=branches, pw_chain=pw_chain,
            gate_fc1=gate1, gate_fc2=gate2))
    return Model(spec, blocks, precision)


def _fresh_bn(channels: int, dtype) -> BnParams:
    return BnParams(np.ones(channels, dtype), np.zeros(channels, dtype),
                    np.zeros(channels, dtype), np.ones(channels, dtype), BN_EPS)


def model_forward(model: Model, grid: np.ndarray, mode: str = "train"):
    """Apply all layers in order; returns (prediction, per-block caches)."""
    check_tensor(grid, "grid")
    if grid.shape[2] != model.spec.in_channels:
        raise ValueError(f"grid has {grid.shape[2]} channels, "
                         f"model expects {model.spec.in_channels}")
    if model.locked_shape is not None and grid.shape[:2] != model.locked_shape:
        raise LockedShapeError(
            f"model is locked to its training grid {model.locked_shape[0]}x"
            f"{model.locked_shape[1]}, got {grid.shape[0]}x{grid.shape[1]}")
    x = grid.astype(model.dtype, copy=False)
    if model.spec.family == "pe-mlp":
        x = positional_encode(x, model.spec.pe_octaves)
    caches = []
    for block in model.blocks:
        x, cache = block_forward(block, x, mode)
        caches.append(cache)
    return x, caches


def model_backward(model: Model, caches: list, grad_pred: np.ndarray) -> dict:
    """Gradients for every learned parameter, keyed like parameters()."""
    if len(caches) != len(model.blocks):
        raise ValueError("cache list does not match the model's layers")
    grads: dict[str, np.ndarray] = {}
    g = grad_pred
    for i in reversed(range(len(model.blocks))):
        cache = caches[i]
        if cache is None:
            raise ValueError("stale or eval-mode cache; rerun a train forward")
        g, block_grads = block_backward(model.blocks[i], cache, g,
                                        need_grad_x=i > 0)
        for name, arr in block_grads.items():
            grads[f"b{i}.{name}"] = arr
    return grads


def _record_stats(bn: BnParams, stats: BnParams):
    bn.mu[:] = stats.mu
    bn.var[:] = stats.var


def capture_bn_stats(model: Model, grid: np.ndarray) -> np.ndarray:
    """Freeze batch statistics from one train-mode pass over `grid`.

    Training here is full-batch (the whole image every step), so the batch
    statistics of the final pass are exactly the inference statistics.
    """
    pred, caches = model_forward(model, grid, mode="train")
    for block, cache in zip(model.blocks, caches):
        if block.bn_main is not None:
            _record_stats(block.bn_main, cache["stats"])
        for (_, bn), bc in zip(block.branches, cache.get("branch_caches", [])):
            _record_stats(bn, bc["stats"])
        for (_, bn), pc in zip(block.pw_chain, cache.get("pw_caches", [])):
            _record_stats(bn, pc["stats"])
    model.stats_captured = True
    model.train_shape = grid.shape[:2]
    return pred
