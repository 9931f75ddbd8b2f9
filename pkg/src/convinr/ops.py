"""Differentiable tensor primitives.

Tensors are plain numpy arrays of shape (H, W, C), C-contiguous with the
channel axis innermost, in float32 (training) or float64 (gradient checks).
Every operation is a pure function returning new arrays; backward functions
are explicit per primitive, there is no autodiff tape.

Convolution is stride 1 with zero padding of (k-1)/2 on each side, so the
output always has the input's spatial shape. The padding choice and the
per-element summation order are part of the contract (see _kernels).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

FLOAT_DTYPES = (np.float32, np.float64)


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise ValueError(f"{name} must be a rank-3 (H, W, C) array")
    if x.dtype.type not in FLOAT_DTYPES:
        raise ValueError(f"{name} must be float32 or float64, got {x.dtype}")
    return x


@dataclass
class ConvKernel:
    """K x K x Cin x Cout weights plus per-output-channel bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 4 or w.shape[0] != w.shape[1]:
            raise ValueError("weights must have shape (k, k, cin, cout)")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        if self.bias.shape != (w.shape[3],):
            raise ValueError("bias length must equal cout")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def cin(self) -> int:
        return self.weights.shape[2]

    @property
    def cout(self) -> int:
        return self.weights.shape[3]

    @property
    def dtype(self):
        return self.weights.dtype

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.bias.copy())

    def param_count(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class BnParams:
    """Per-channel batch-norm state: learned affine (gamma, beta) plus
    recorded statistics (mu, var)."""

    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = self.gamma.shape[0]
        for name in ("beta", "mu", "var"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must match gamma's length {n}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if np.any(self.var < 0):
            raise ValueError("variances must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def copy(self) -> "BnParams":
        return BnParams(self.gamma.copy(), self.beta.copy(),
                        self.mu.copy(), self.var.copy(), self.eps)

    @classmethod
    def identity(cls, channels: int, dtype=np.float32, eps: float = 1e-5) -> "BnParams":
        # var = 1 - eps makes eval-mode scale gamma/sqrt(var+eps) exactly 1
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.full(channels, 1.0 - eps, dtype), eps)


def _pad_input(x: np.ndarray, k: int) -> np.ndarray:
    p = (k - 1) // 2
    if p == 0:
        return np.ascontiguousarray(x)
    H, W, C = x.shape
    xp = np.zeros((H + 2 * p, W + 2 * p, C), dtype=x.dtype)
    xp[p:p + H, p:p + W] = x
    return xp


def conv2d_forward(x: np.ndarray, kern: ConvKernel) -> np.ndarray:
    """Same-size convolution, out[i,j,co] = bias[co] + sum w * x_padded."""
    check_tensor(x, "x")
    if kern.cin != x.shape[2]:
        raise ValueError(f"kernel expects {kern.cin} input channels, got {x.shape[2]}")
    if kern.dtype != x.dtype:
        raise ValueError(f"kernel is {kern.dtype}, input is {x.dtype}")
    H, W, _ = x.shape
    xp = _pad_input(x, kern.k)
    out = np.empty((H, W, kern.cout), dtype=x.dtype)
    _kernels.conv2d_fwd(xp, kern.weights, kern.bias, out)
    return out


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, kern: ConvKernel,
                    need_grad_x: bool = True):
    """Gradients of sum(grad_out * conv2d_forward(x, kern)).

    Returns (grad_x, grad_w, grad_b); grad_x is None when need_grad_x is
    False (saves the most expensive kernel for layers whose input is the
    constant coordinate grid).
    """
    check_tensor(grad_out, "grad_out")
    check_tensor(x, "x")
    if kern.cin != x.shape[2]:
        raise ValueError("x channels do not match the kernel")
    if grad_out.shape != (x.shape[0], x.shape[1], kern.cout):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match the "
                         f"forward output {(x.shape[0], x.shape[1], kern.cout)}")
    k = kern.k
    H, W, _ = x.shape
    xp = _pad_input(x, k)
    gout = np.ascontiguousarray(grad_out)

    gw = np.zeros_like(kern.weights)
    gb = np.zeros_like(kern.bias)
    _kernels.conv2d_bwd_w(xp, gout, gw, gb)

    gx = None
    if need_grad_x:
        # grad wrt input is itself a same-padded convolution of grad_out with
        # the spatially flipped, channel-transposed kernel
        wt = np.ascontiguousarray(kern.weights[::-1, ::-1].transpose(0, 1, 3, 2))
        gp = _pad_input(gout, k)
        gx = np.empty_like(x)
        _kernels.conv2d_fwd(gp, wt, np.zeros(kern.cin, dtype=x.dtype), gx)
    return gx, gw, gb


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      eps: float, mode: str = "train",
                      frozen: BnParams | None = None):
    """Normalize each channel over all H*W positions.

    Train mode computes batch statistics from x and returns them in a
    BnParams; eval mode requires frozen statistics.
    """
    check_tensor(x, "x")
    H, W, C = x.shape
    if H * W == 0:
        raise ValueError("batchnorm needs a non-empty spatial extent")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError("gamma/beta must have one entry per channel")
    if mode == "train":
        mu64 = np.empty(C, np.float64)
        var64 = np.empty(C, np.float64)
        _kernels.bn_stats(np.ascontiguousarray(x), mu64, var64)
        mu = mu64.astype(x.dtype)
        var = var64.astype(x.dtype)
    elif mode == "eval":
        if frozen is None:
            raise ValueError("eval mode requires frozen statistics")
        if frozen.channels != C:
            raise ValueError("frozen statistics channel mismatch")
        mu, var = frozen.mu, frozen.var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    scale = (gamma / np.sqrt(var + x.dtype.type(eps))).astype(x.dtype, copy=False)
    shift = (beta - mu * scale).astype(x.dtype, copy=False)
    y = np.empty_like(x)
    _kernels.bn_apply(np.ascontiguousarray(x), scale, shift, y)
    stats = BnParams(gamma, beta, mu.astype(x.dtype, copy=False),
                     var.astype(x.dtype, copy=False), eps)
    return y, stats


def batchnorm_backward(grad_out: np.ndarray, x: np.ndarray, gamma: np.ndarray,
                       eps: float, stats: BnParams | None = None):
    """Train-mode gradient; the batch statistics are functions of x.

    `stats` can pass the statistics recorded by the forward pass to avoid
    recomputing them; they must be the batch statistics of this x.
    """
    check_tensor(grad_out, "grad_out")
    check_tensor(x, "x")
    if grad_out.shape != x.shape:
        raise ValueError("grad_out must match x")
    C = x.shape[2]
    if stats is not None:
        mu64 = stats.mu.astype(np.float64)
        var64 = stats.var.astype(np.float64)
    else:
        mu64 = np.empty(C, np.float64)
        var64 = np.empty(C, np.float64)
        _kernels.bn_stats(np.ascontiguousarray(x), mu64, var64)
    inv_std = 1.0 / np.sqrt(var64 + float(eps))

    # reduced chain rule: gx = inv*gamma*(g - mean(g) - xhat*mean(g*xhat))
    gx = np.empty_like(x)
    s1 = np.empty(C, np.float64)
    s2 = np.empty(C, np.float64)
    _kernels.bn_bwd(np.ascontiguousarray(x), np.ascontiguousarray(grad_out),
                    mu64, inv_std, gamma.astype(np.float64), gx, s1, s2)
    grad_beta = s1.astype(x.dtype)
    grad_gamma = (inv_std * s2).astype(x.dtype)
    return gx, grad_gamma, grad_beta


def activation_forward(x: np.ndarray, kind: str, omega: float = 1.0) -> np.ndarray:
    check_tensor(x, "x")
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sine":
        if omega <= 0:
            raise ValueError("omega must be positive")
        return np.sin(x.dtype.type(omega) * x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad_out: np.ndarray, x: np.ndarray, kind: str,
                        omega: float = 1.0) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise ValueError("grad_out must match x")
    if kind == "relu":
        # derivative at exactly 0 is taken to be 0
        return grad_out * (x > 0)
    if kind == "sine":
        w = x.dtype.type(omega)
        return grad_out * (w * np.cos(w * x))
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically safe on both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    check_tensor(x, "x")
    H, W, C = x.shape
    if H * W == 0:
        raise ValueError("cannot pool an empty tensor")
    return x.mean(axis=(0, 1)).reshape(1, 1, C)


def global_avg_pool_backward(grad_out: np.ndarray, height: int, width: int) -> np.ndarray:
    if grad_out.shape[:2] != (1, 1):
        raise ValueError("pool gradient must be 1x1xC")
    scale = grad_out.dtype.type(1.0 / (height * width))
    return np.broadcast_to(grad_out * scale, (height, width, grad_out.shape[2])).copy()


def channel_scale(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    check_tensor(x, "x")
    if s.shape != (x.shape[2],):
        raise ValueError("scale must have one entry per channel")
    return x * s


def channel_scale_backward(grad_out: np.ndarray, x: np.ndarray, s: np.ndarray):
    if grad_out.shape != x.shape:
        raise ValueError("grad_out must match x")
    grad_x = grad_out * s
    grad_s = (grad_out * x).sum(axis=(0, 1))
    return grad_x, grad_s


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient w.r.t. pred (factor 2 included)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = diff * pred.dtype.type(2.0 / diff.size)
    return loss, grad
