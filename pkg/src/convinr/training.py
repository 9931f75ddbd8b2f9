"""Adam optimizer, the image-fitting loop, and the PSNR metric.

Training is full batch: every iteration renders the whole coordinate grid,
compares against the whole target image, and applies one Adam step. With a
fixed seed the entire run is bit-deterministic.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .models import Model, ModelSpec, build_model, capture_bn_stats, \
    make_coordinate_grid, model_backward, model_forward
from .ops import mse_loss
from .rng import seeded_rng


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    log_every: int = 100
    precision: int = 32

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps_adam <= 0:
            raise ValueError("eps_adam must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")


class AdamState:
    """First/second moment estimates per parameter, plus the step counter."""

    def __init__(self, params: list[tuple[str, np.ndarray]]):
        self.m = {name: np.zeros_like(arr) for name, arr in params}
        self.v = {name: np.zeros_like(arr) for name, arr in params}
        self.t = 0


@dataclass
class FitReport:
    loss_history: list[tuple[int, float]] = field(default_factory=list)
    final_loss: float = float("nan")
    final_psnr: float = float("nan")
    wall_time_s: float = 0.0
    param_count: int = 0
    config: dict = field(default_factory=dict)
    stats_captured: bool = False


class NonFiniteLossError(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"loss became non-finite at iteration {iteration}: {loss}")
        self.iteration = iteration
        self.loss = loss


def adam_step(params: list[tuple[str, np.ndarray]], grads: dict,
              state: AdamState, cfg: TrainConfig) -> None:
    """One Adam update, in place.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    state.t += 1
    t = state.t
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        dt = p.dtype.type
        m = state.m[name]
        v = state.v[name]
        m *= dt(cfg.beta1)
        m += dt(1 - cfg.beta1) * g
        v *= dt(cfg.beta2)
        v += dt(1 - cfg.beta2) * (g * g)
        mhat = m / dt(1 - cfg.beta1 ** t)
        vhat = v / dt(1 - cfg.beta2 ** t)
        p -= dt(cfg.lr) * mhat / (np.sqrt(vhat) + dt(cfg.eps_adam))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def quantize8(x: np.ndarray) -> np.ndarray:
    """Snap values in [0, 1] to the 8-bit grid (round half away from zero)."""
    return np.floor(x * x.dtype.type(255.0) + x.dtype.type(0.5)) / x.dtype.type(255.0)


def render(model: Model, grid: np.ndarray) -> np.ndarray:
    """Eval-mode forward in export form: clamped to [0, 1] and quantized to
    the 8-bit grid, so the values match a written PNG exactly. Reported PSNR
    numbers therefore describe the exported artifact."""
    pred, _ = model_forward(model, grid, mode="eval")
    return quantize8(np.clip(pred, 0.0, 1.0))


def fit(spec: ModelSpec, target: np.ndarray, cfg: TrainConfig):
    """Fit one model to one image; returns (model, FitReport).

    The returned model has frozen batch statistics and is eval-ready.
    """
    if target.ndim != 3:
        raise ValueError("target must be (H, W, C)")
    if float(target.min()) < 0.0 or float(target.max()) > 1.0:
        raise ValueError("target values must lie in [0, 1]")
    if spec.out_channels != target.shape[2]:
        raise ValueError(f"spec emits {spec.out_channels} channels, "
                         f"target has {target.shape[2]}")
    t_start = time.perf_counter()
    dtype = np.float32 if cfg.precision == 32 else np.float64
    target = target.astype(dtype, copy=False)
    grid = make_coordinate_grid(target.shape[0], target.shape[1], dtype)
    model = build_model(spec, seeded_rng(cfg.seed), precision=cfg.precision)
    params = model.parameters()
    state = AdamState(params)
    history: list[tuple[int, float]] = []
    loss = float("nan")
    for it in range(1, cfg.iterations + 1):
        pred, caches = model_forward(model, grid, mode="train")
        loss, grad = mse_loss(pred, target)
        if not np.isfinite(loss):
            raise NonFiniteLossError(it, loss)
        if it % cfg.log_every == 0 or it == cfg.iterations:
            history.append((it, loss))
        grads = model_backward(model, caches, grad)
        adam_step(params, grads, state, cfg)
    capture_bn_stats(model, grid)
    final = psnr(render(model, grid), target)
    report = FitReport(
        loss_history=history,
        final_loss=loss,
        final_psnr=final,
        wall_time_s=time.perf_counter() - t_start,
        param_count=model.param_count,
        config={"spec": spec.to_dict(), **asdict(cfg)},
        stats_captured=model.stats_captured,
    )
    return model, report
