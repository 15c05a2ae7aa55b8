"""On-disk dataset format: ``manifest.json`` plus a flat little-endian ``samples.bin``.

Per sample the blob holds (2T+1)*H*W float32 pixels, n*2 float32 key-frame
coordinates, then n visibility bytes.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synth import JOINT_NAMES, ClipSample, CorruptionConfig, generate_samples, split_corruption

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "samples.bin"
_F32 = np.dtype("<f4")


class DatasetFormatError(ValueError):
    """Malformed dataset files."""


class DatasetVersionError(DatasetFormatError):
    pass


@dataclass
class Dataset:
    """Samples stacked into arrays, plus the header fields the manifest records."""
    observations: np.ndarray   # (N, 2T+1, H, W) float32
    gt: np.ndarray             # (N, n, 2) float32
    visibility: np.ndarray     # (N, n) uint8
    seeds: np.ndarray          # (N,) int64
    n: int
    T: int
    H: int
    W: int
    K: int = 5
    corruption: dict = field(default_factory=dict)
    split: str = ""
    crops: np.ndarray | None = None  # (N, 4) float64 crop windows

    def __post_init__(self):
        if self.crops is None:
            self.crops = np.tile([0.0, 0.0, 1.0, 1.0], (len(self.gt), 1))

    def __len__(self) -> int:
        return len(self.gt)

    @classmethod
    def from_samples(cls, samples: list[ClipSample], *, n: int | None = None, T: int | None = None,
                     H: int | None = None, W: int | None = None, K: int = 5,
                     corruption: CorruptionConfig | dict | None = None, split: str = "") -> "Dataset":
        if samples:
            s0 = samples[0]
            T = s0.T if T is None else T
            H, W = s0.observations.shape[1:] if H is None else (H, W)
            n = len(s0.gt_key) if n is None else n
        if None in (n, T, H, W):
            raise ValueError("empty sample list needs explicit n, T, H, W")
        F = 2 * T + 1
        obs = np.stack([s.observations for s in samples]) if samples else np.zeros((0, F, H, W), np.float32)
        gt = np.stack([s.gt_key for s in samples]) if samples else np.zeros((0, n, 2), np.float32)
        vis = np.stack([s.gt_visibility for s in samples]) if samples else np.zeros((0, n), np.uint8)
        seeds = np.array([s.seed for s in samples], dtype=np.int64)
        crops = np.array([s.crop for s in samples], dtype=np.float64).reshape(-1, 4)
        if isinstance(corruption, CorruptionConfig):
            corruption = corruption.to_dict()
        return cls(obs.astype(np.float32), gt.astype(np.float32), vis.astype(np.uint8), seeds,
                   n, T, H, W, K, dict(corruption or {}), split, crops)

    def samples(self) -> list[ClipSample]:
        return [ClipSample(self.observations[i], self.gt[i], self.visibility[i], int(self.seeds[i]),
                           tuple(float(c) for c in self.crops[i])) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.observations[idx], self.gt[idx], self.visibility[idx], self.seeds[idx],
                       self.n, self.T, self.H, self.W, self.K, self.corruption, self.split, self.crops[idx])


def _record_size(d: Dataset) -> int:
    return (2 * d.T + 1) * d.H * d.W * 4 + d.n * 2 * 4 + d.n


def write_dataset(data: Dataset | list[ClipSample], path: str | os.PathLike) -> None:
    """Write ``manifest.json`` and ``samples.bin`` into directory ``path``."""
    if not isinstance(data, Dataset):
        data = Dataset.from_samples(list(data))
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    size = _record_size(data)
    records = []
    with open(path / BLOB, "wb") as fh:
        for i in range(len(data)):
            records.append({"offset": i * size, "seed": int(data.seeds[i]),
                            "crop": [float(c) for c in data.crops[i]]})
            fh.write(data.observations[i].astype(_F32).tobytes())
            fh.write(data.gt[i].astype(_F32).tobytes())
            fh.write(data.visibility[i].astype(np.uint8).tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "n": data.n, "T": data.T, "H": data.H, "W": data.W, "K": data.K,
        "split": data.split,
        "corruption": data.corruption,
        "count": len(data),
        "record_bytes": size,
        "records": records,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def read_manifest(path: str | os.PathLike) -> dict:
    raw = (Path(path) / MANIFEST).read_bytes()
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{MANIFEST}: invalid JSON at byte {e.pos}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetVersionError(f"dataset format_version {version!r}, expected {FORMAT_VERSION}")
    for key in ("n", "T", "H", "W", "count", "records"):
        if key not in manifest:
            raise DatasetFormatError(f"{MANIFEST}: missing field {key!r}")
    return manifest


def read_dataset(path: str | os.PathLike) -> Dataset:
    """Load a dataset directory; raises :class:`DatasetFormatError` on any inconsistency."""
    path = Path(path)
    m = read_manifest(path)
    n, T, H, W = m["n"], m["T"], m["H"], m["W"]
    F = 2 * T + 1
    count = m["count"]
    if len(m["records"]) != count:
        raise DatasetFormatError(f"{MANIFEST}: count {count} but {len(m['records'])} records")
    blob = (path / BLOB).read_bytes()
    n_pix, n_gt = F * H * W * 4, n * 2 * 4
    size = n_pix + n_gt + n
    obs = np.empty((count, F, H, W), np.float32)
    gt = np.empty((count, n, 2), np.float32)
    vis = np.empty((count, n), np.uint8)
    seeds = np.empty(count, np.int64)
    crops = np.empty((count, 4), np.float64)
    for i, rec in enumerate(m["records"]):
        off = rec["offset"]
        if off < 0 or off + size > len(blob):
            raise DatasetFormatError(
                f"{BLOB}: record {i} needs bytes [{off}, {off + size}) but file ends at byte {len(blob)}")
        obs[i] = np.frombuffer(blob, _F32, F * H * W, off).reshape(F, H, W)
        gt[i] = np.frombuffer(blob, _F32, n * 2, off + n_pix).reshape(n, 2)
        vis[i] = np.frombuffer(blob, np.uint8, n, off + n_pix + n_gt)
        seeds[i] = rec.get("seed", 0)
        crops[i] = rec.get("crop", [0.0, 0.0, 1.0, 1.0])
    expected = count * size
    if len(blob) != expected:
        raise DatasetFormatError(f"{BLOB}: {len(blob)} bytes, expected {expected} (trailing data at byte {expected})")
    return Dataset(obs, gt, vis, seeds, n, T, H, W, m.get("K", 5), m.get("corruption", {}), m.get("split", ""),
                   crops)


def generate_dataset(count: int, split: str = "train", seed: int = 0, T: int = 1, H: int = 64, W: int = 48,
                     corruption: CorruptionConfig | None = None, **kw) -> Dataset:
    """Generate ``count`` clips of one split straight into a :class:`Dataset`."""
    samples = generate_samples(count, split, seed, T, H, W, corruption=corruption, **kw)
    spec = kw.get("spec")
    n = spec.n if spec is not None else len(JOINT_NAMES)
    K = spec.K if spec is not None else 5
    return Dataset.from_samples(samples, n=n, T=T, H=H, W=W, K=K,
                                corruption=split_corruption(split, corruption), split=split)
