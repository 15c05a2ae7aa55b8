"""Gradient self-checks: every differentiable op, and the whole model in every mode."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import MODES, DstaModel, ModelConfig, dsta_forward
from .numerics import Tensor, grad_check, numeric_grad

OP_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-4

# name -> (function, input shapes); inputs are standard normal draws
OP_CASES = {
    "add": (lambda x, y: x + y, [(4, 5, 6), (5, 6)]),
    "sub": (lambda x, y: x - y, [(4, 5, 6), (4, 1, 6)]),
    "mul": (lambda x, y: x * y, [(4, 5, 6), (4, 5, 6)]),
    "div": (lambda x, y: x / (nx.exp(y) + 1.0), [(4, 5), (4, 5)]),
    "matmul": (lambda x, y: nx.matmul(x, y), [(4, 5, 6), (6, 3)]),
    "matmul_batched": (lambda x, y: nx.matmul(x, y), [(4, 5, 6), (4, 6, 2)]),
    "linear": (lambda x, w, b: nx.linear(x, w, b), [(4, 5, 6), (6, 3), (3,)]),
    "relu": (lambda x: nx.relu(x), [(4, 5, 6)]),
    "exp": (lambda x: nx.exp(x), [(4, 5)]),
    "log": (lambda x: nx.log(x * x + 1.0), [(4, 5)]),
    "abs": (lambda x: nx.abs_(x), [(4, 5, 6)]),
    "sin": (lambda x: nx.sin(x), [(4, 5)]),
    "cos": (lambda x: nx.cos(x), [(4, 5)]),
    "pow": (lambda x: x ** 3, [(4, 5)]),
    "softmax": (lambda x: nx.softmax(x, axis=1), [(4, 5, 6)]),
    "layer_norm": (lambda x, g, b: nx.layer_norm(x, g, b), [(4, 5, 6), (6,), (6,)]),
    "layer_norm_axis0": (lambda x, g, b: nx.layer_norm(x, g, b, axis=0), [(4, 5), (4,), (4,)]),
    "concat": (lambda x, y: nx.concat([x, y], axis=1), [(4, 5, 6), (4, 2, 6)]),
    "stack": (lambda x, y: nx.stack([x, y], axis=1), [(4, 5), (4, 5)]),
    "slice": (lambda x: nx.slice_axis(x, 2, 1, 4), [(4, 5, 6)]),
    "take": (lambda x: nx.take(x, [[2, 0], [2, 1]], axis=1), [(4, 5, 6)]),
    "mean_axis": (lambda x: nx.mean_axis(x, axis=(0, 2)), [(4, 5, 6)]),
    "sum": (lambda x: nx.sum_(x, axis=1, keepdims=True), [(4, 5, 6)]),
    "transpose": (lambda x: nx.transpose(x, (2, 0, 1)), [(4, 5, 6)]),
    "swapaxes": (lambda x: nx.swapaxes(x, 0, 2), [(4, 5, 6)]),
    "reshape": (lambda x: nx.reshape(x, (20, 6)), [(4, 5, 6)]),
    "getitem": (lambda x: x[1:3, ::2], [(4, 5, 6)]),
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def check_op(name: str, seed: int = 0, h: float = 1e-5) -> float:
    """Relative gradient error of one op under a random weighted-sum loss."""
    fn, shapes = OP_CASES[name]
    rng = np.random.default_rng([seed, len(name)])
    inputs = [Tensor(rng.normal(size=s)) for s in shapes]
    w = {}

    def loss(*xs):
        y = fn(*xs)
        # a fixed random weighting so each output element's gradient differs
        if "w" not in w:
            w["w"] = rng.normal(size=y.shape)
        return nx.sum_(y * w["w"])

    return grad_check(loss, inputs, h=h)


def check_ops(seeds=(0, 1, 2)) -> list[CheckResult]:
    out = []
    for name in OP_CASES:
        err = max(check_op(name, s) for s in seeds)
        out.append(CheckResult(name, err, OP_TOLERANCE))
    return out


def tiny_config(mode: str, jfd_mode: str = "fc", seed: int = 0) -> ModelConfig:
    """A model small enough for element-wise central differences over every parameter."""
    return ModelConfig(n=4, groups=((0, 1), (2, 3)), H=8, W=8, patch_size=4, embed_dim=8, depth=1,
                       D=8, heads=2, layers=2, ffn_mult=2, head_hidden=8, jfd_mode=jfd_mode,
                       mode=mode, frame_offsets=(-1, 0, 1), seed=seed)


def check_model(mode: str, jfd_mode: str = "fc", seed: int = 0, batch: int = 2, h: float = 1e-5) -> float:
    """Max relative error of d(loss)/d(param) over all parameters the mode uses (64-bit)."""
    from .train import model_loss

    with nx.precision(np.float64):
        model = DstaModel(tiny_config(mode, jfd_mode, seed))
    model.astype(np.float64)
    cfg = model.cfg
    rng = np.random.default_rng([seed, 11])
    obs = rng.uniform(0, 1, (batch, 3, cfg.H, cfg.W))
    gt = rng.uniform(-0.5, 0.5, (batch, cfg.n, 2))
    vis = np.ones((batch, cfg.n), np.uint8)
    vis[0, 1] = 0

    def loss():
        return model_loss(dsta_forward(obs, model, data_T=1), gt, vis)

    model.zero_grad()
    nx.backward(loss())
    worst = 0.0
    for p in model.parameters().values():
        if p.grad is None:
            continue  # not on this mode's path
        analytic = p.grad.copy()
        numeric = numeric_grad(loss, p, h)
        if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
            return float("inf")
        worst = max(worst, float((np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))).max()))
    return worst


def check_models(modes=MODES, jfd_modes=("fc", "conv")) -> list[CheckResult]:
    return [CheckResult(f"{m}/{j}", check_model(m, j), MODEL_TOLERANCE) for j in jfd_modes for m in modes]
