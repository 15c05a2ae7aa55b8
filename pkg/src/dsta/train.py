"""Laplace density loss, the training loop and checkpoint persistence."""
from __future__ import annotations

import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .dataset import Dataset
from .model import DstaModel, ModelConfig, ModelOutput, dsta_forward
from .numerics import AdamWState, Tensor, adamw_step

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"DSTACKPT"
AUX_LOSS_WEIGHT = 0.1
LOG2 = math.log(2.0)


class NaNLossError(FloatingPointError):
    pass


class CheckpointError(ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class CheckpointFormatError(CheckpointError):
    """The file itself is damaged (bad magic, unreadable header, truncated blob)."""


def laplace_nll(mu: Tensor, b: Tensor, gt, visibility) -> Tensor:
    """Mean over visible joints and both axes of ``|gt - mu| / b + log(2b)``.

    ``mu``/``b`` are (..., n, 2), ``visibility`` is (..., n). Invisible
    joints contribute nothing; with none visible the loss is exactly 0.
    """
    if np.any(b.data <= 0):
        raise FloatingPointError("laplace_nll: non-positive scale")
    vis = np.asarray(visibility, dtype=mu.dtype)
    mask = np.broadcast_to(vis[..., None], mu.shape)
    count = float(mask.sum())
    if count == 0:
        return nx.sum_(mu * 0.0) + nx.sum_(b * 0.0)
    per = nx.abs_(nx.sub(np.asarray(gt, dtype=mu.dtype), mu)) / b + (nx.log(b) + LOG2)
    return nx.sum_(per * mask) * (1.0 / count)


def laplace_nll_logscale(mu: Tensor, log_b: Tensor, gt, visibility) -> Tensor:
    """Same value as :func:`laplace_nll` with ``b = exp(log_b)``; avoids log(exp(.))."""
    vis = np.asarray(visibility, dtype=mu.dtype)
    mask = np.broadcast_to(vis[..., None], mu.shape)
    count = float(mask.sum())
    if count == 0:
        return nx.sum_(mu * 0.0) + nx.sum_(log_b * 0.0)
    r = nx.abs_(nx.sub(np.asarray(gt, dtype=mu.dtype), mu))
    per = r * nx.exp(-log_b) + (log_b + LOG2)
    return nx.sum_(per * mask) * (1.0 / count)


def model_loss(out: ModelOutput, gt, visibility) -> Tensor:
    """Main density loss plus the down-weighted auxiliary term for coord_embed tokens."""
    loss = laplace_nll_logscale(out.coords, out.log_scale, gt, visibility)
    if out.aux is not None:
        coarse, coarse_log_b = out.aux
        F = coarse.shape[1]
        g = np.repeat(np.asarray(gt)[:, None], F, axis=1)
        v = np.repeat(np.asarray(visibility)[:, None], F, axis=1)
        # only the key-frame target is known; every frame is pulled towards it
        loss = loss + AUX_LOSS_WEIGHT * laplace_nll_logscale(coarse, coarse_log_b, g, v)
    return loss


@dataclass
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    weight_decay: float = 0.01
    decay_at: tuple = (0.5, 0.75)
    decay_factor: float = 0.1
    max_steps: int | None = None

    def __post_init__(self):
        self.decay_at = tuple(self.decay_at)
        for e in self.milestones():
            if not 1 <= e <= self.epochs:
                raise ValueError(f"decay epoch {e} outside [1, {self.epochs}]")

    def milestones(self) -> list[int]:
        return [max(1, int(self.epochs * f)) for f in self.decay_at]

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: one decay per milestone already completed."""
        passed = sum(1 for m in self.milestones() if epoch > m)
        return self.lr * self.decay_factor ** passed


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_pck: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _max_grad(model: DstaModel) -> float:
    return max((float(np.abs(p.grad).max()) for p in model.parameters().values() if p.grad is not None),
               default=0.0)


def train(model: DstaModel, data: Dataset, cfg: TrainConfig, val: Dataset | None = None,
          opt: AdamWState | None = None, evaluate: Callable[[DstaModel, Dataset], float] | None = None,
          metrics_path: str | os.PathLike | None = None) -> tuple[DstaModel, list[EpochLog]]:
    """Seeded mini-batch AdamW with step decay; returns the model and per-epoch logs.

    ``evaluate(model, val)`` supplies the validation PCK recorded per epoch
    (defaults to PCK@0.2 when ``val`` is given).
    """
    if len(data) == 0:
        raise ValueError("train: empty dataset")
    if evaluate is None and val is not None:
        from .evaluation import pck_eval

        def evaluate(m, d):
            return pck_eval(m, d).mean[0.2]

    opt = opt or AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    params = model.parameters()
    rng = np.random.default_rng([cfg.seed, 7])
    logs: list[EpochLog] = []
    step = 0
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(len(data))
            total, batches = 0.0, 0
            for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                idx = np.sort(order[start:start + cfg.batch_size])
                model.zero_grad()
                out = dsta_forward(data.observations[idx], model, data_T=data.T)
                loss = model_loss(out, data.gt[idx], data.visibility[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NaNLossError(f"non-finite loss at epoch {epoch}, batch {bi}: "
                                       f"max |grad| from previous step {_max_grad(model):.3g}")
                nx.backward(loss)
                if not all(np.all(np.isfinite(p.grad)) for p in params.values() if p.grad is not None):
                    raise NaNLossError(f"non-finite gradient at epoch {epoch}, batch {bi}")
                adamw_step(params, opt, lr=lr)
                total += value
                batches += 1
                step += 1
            entry = EpochLog(epoch, lr, total / max(batches, 1))
            if val is not None and evaluate is not None:
                entry.val_pck = float(evaluate(model, val))
            logs.append(entry)
            log.info("epoch %d lr %.2e loss %.4f val_pck %s", epoch, lr, entry.train_loss, entry.val_pck)
            if sink:
                sink.write(entry.to_json() + "\n")
                sink.flush()
    finally:
        if sink:
            sink.close()
    model.optimizer_state = opt
    return model, logs


# -- checkpoints -----------------------------------------------------------------
def _tensor_table(model: DstaModel, opt: AdamWState | None) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{k}", p.data) for k, p in model.parameters().items()]
    if opt is not None:
        for k in sorted(opt.m):
            items.append((f"adam_m/{k}", opt.m[k]))
            items.append((f"adam_v/{k}", opt.v[k]))
    return items


def save_checkpoint(model: DstaModel, path: str | os.PathLike, opt: AdamWState | None = None) -> None:
    """Magic, uint64 header length, JSON header, then a little-endian float32 blob."""
    opt = opt if opt is not None else getattr(model, "optimizer_state", None)
    directory, offset = [], 0
    blob = io.BytesIO()
    for name, arr in _tensor_table(model, opt):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.write(raw)
        offset += len(raw)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "tensors": directory,
        "optimizer": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
            "weight_decay": opt.weight_decay, "eps": opt.eps, "step": opt.step},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(hbytes).to_bytes(8, "little"))
        fh.write(hbytes)
        fh.write(blob.getvalue())


def read_checkpoint_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)", "magic")
    hlen = int.from_bytes(raw[8:16], "little")
    if 16 + hlen > len(raw):
        raise CheckpointFormatError(f"{path}: header truncated at byte {len(raw)}", "header")
    try:
        header = json.loads(raw[16:16 + hlen])
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{path}: invalid header JSON at byte {16 + e.pos}", "header") from None
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format_version {header.get('format_version')!r}, "
                              f"expected {CHECKPOINT_VERSION}", "format_version")
    return header, raw[16 + hlen:]


def load_checkpoint(path: str | os.PathLike, expect: dict | None = None) -> DstaModel:
    """Rebuild the model (and ``model.optimizer_state``) from ``path``.

    ``expect`` maps config fields to required values; any difference raises
    :class:`CheckpointError` naming the field.
    """
    header, blob = read_checkpoint_header(path)
    cfg_dict = header["config"]
    for key, want in (expect or {}).items():
        have = cfg_dict.get(key)
        if isinstance(have, list):
            have = [list(x) if isinstance(x, list) else x for x in have]
            want = [list(x) if isinstance(x, (list, tuple)) else x for x in want] if isinstance(want, (list, tuple)) else want
        if have != want:
            raise CheckpointError(f"checkpoint {key}={have!r} but {want!r} required", key)
    try:
        cfg = ModelConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint config invalid: {e}", "config") from None
    with nx.precision(np.float32):
        model = DstaModel(cfg)
    params = model.parameters()
    table = {t["name"]: t for t in header["tensors"]}
    opt = None
    if header.get("optimizer") is not None:
        opt = AdamWState(**header["optimizer"])
    for name, entry in table.items():
        kind, key = name.split("/", 1)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = entry["offset"] + 4 * count
        if end > len(blob):
            raise CheckpointFormatError(f"tensor {name} truncated at byte {len(blob)}", name)
        arr = np.frombuffer(blob, "<f4", count, entry["offset"]).reshape(shape).astype(np.float32)
        if kind == "param":
            if key not in params:
                raise CheckpointError(f"unexpected parameter {key}", key)
            if params[key].shape != shape:
                raise CheckpointError(f"parameter {key} has shape {shape}, model expects {params[key].shape}", key)
            params[key].data = arr
        elif opt is not None:
            (opt.m if kind == "adam_m" else opt.v)[key] = arr
    missing = [k for k in params if f"param/{k}" not in table]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing[:3]}", missing[0])
    model.optimizer_state = opt
    return model
