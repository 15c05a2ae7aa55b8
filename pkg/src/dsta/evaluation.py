"""PCK evaluation of trained models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .dataset import Dataset
from .model import DstaModel, dsta_forward

THRESHOLDS = (0.05, 0.1, 0.2)
TORSO_JOINTS = (3, 6, 9, 12)  # shoulders and hips of the default skeleton


@dataclass
class PckResult:
    thresholds: tuple
    per_joint: dict            # alpha -> (n,) correctness rate (nan where never visible)
    mean: dict                 # alpha -> visible-weighted mean over joints
    per_group: dict = field(default_factory=dict)  # alpha -> list of group rates
    split: str = ""
    count: int = 0

    def row(self) -> dict:
        return {f"pck@{a}": self.mean[a] for a in self.thresholds}


def torso_diagonal(gt: np.ndarray, torso=TORSO_JOINTS) -> np.ndarray:
    """Diagonal of the box spanned by shoulders and hips; gt is (N, n, 2) -> (N,)."""
    pts = gt[:, list(torso)]
    extent = pts.max(axis=1) - pts.min(axis=1)
    return np.sqrt((extent ** 2).sum(axis=-1))


def pck_from_predictions(pred: np.ndarray, gt: np.ndarray, visibility: np.ndarray,
                         thresholds=THRESHOLDS, groups=None, torso=TORSO_JOINTS, split: str = "") -> PckResult:
    dist = np.linalg.norm(pred - gt, axis=-1)                # (N, n)
    ref = torso_diagonal(gt, torso)[:, None]
    vis = visibility.astype(bool)
    seen = vis.sum(axis=0)
    per_joint, mean, per_group = {}, {}, {}
    for a in thresholds:
        hit = (dist <= a * ref) & vis
        with np.errstate(invalid="ignore", divide="ignore"):
            per_joint[a] = np.where(seen > 0, hit.sum(axis=0) / np.maximum(seen, 1), np.nan)
        mean[a] = float(hit.sum() / max(vis.sum(), 1))
        if groups is not None:
            per_group[a] = [float(hit[:, list(g)].sum() / max(vis[:, list(g)].sum(), 1)) for g in groups]
    return PckResult(tuple(thresholds), per_joint, mean, per_group, split, len(gt))


def predict(model: DstaModel, data: Dataset, batch_size: int = 64, mode: str | None = None) -> np.ndarray:
    """Predicted key-frame coordinates (N, n, 2) without recording gradients."""
    out = np.empty((len(data), model.cfg.n, 2), dtype=np.float64)
    with nx.no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            res = dsta_forward(data.observations[sl], model, mode=mode, data_T=data.T)
            out[sl] = res.coords.data
    return out


def pck_eval(model: DstaModel, data: Dataset, thresholds=THRESHOLDS, mode: str | None = None) -> PckResult:
    if len(data) == 0:
        raise ValueError("pck_eval: empty dataset")
    pred = predict(model, data, mode=mode)
    return pck_from_predictions(pred, data.gt, data.visibility, thresholds, model.cfg.groups, split=data.split)
