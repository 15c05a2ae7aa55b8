"""Run configuration: JSON sections with defaults; unknown keys are rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .backbone import ConfigError
from .model import ModelConfig, symmetric_offsets
from .synth import Augmentation, CorruptionConfig, MotionDynamics
from .train import TrainConfig


@dataclass
class SkeletonSection:
    groups: list | None = None    # None: the default five limb groups


@dataclass
class CorruptionSection:
    occlusion_prob: float = 0.25
    blur_sigma_range: list = field(default_factory=lambda: [1.0, 2.0])
    observation_noise: float = 0.05


@dataclass
class MotionSection:
    sigma_angle: float = 0.08
    sigma_translation: float = 0.03
    rotation_deg: float = 45.0
    scale_range: list = field(default_factory=lambda: [0.65, 1.35])


@dataclass
class DataSection:
    T: int = 1                # temporal span of generated clips
    H: int = 64
    W: int = 48
    train_count: int = 2000
    val_count: int = 300


@dataclass
class BackboneSection:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2


@dataclass
class ModelSection:
    D: int = 32
    T: int = 1                # span used by the model: offsets -T..T
    frame_offsets: list | None = None   # explicit offsets override T
    layers: int = 4
    heads: int = 2
    ffn_mult: int = 4
    head_hidden: int = 64
    mode: str = "full"
    jfd_mode: str = "conv"


@dataclass
class TrainSection:
    lr: float = 2e-4
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.01
    decay_at: list = field(default_factory=lambda: [0.5, 0.75])
    decay_factor: float = 0.1


@dataclass
class PathSection:
    dataset: str = "data"
    checkpoint: str = "model.ckpt"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    seed: int = 0
    skeleton: SkeletonSection = field(default_factory=SkeletonSection)
    corruption: CorruptionSection = field(default_factory=CorruptionSection)
    motion: MotionSection = field(default_factory=MotionSection)
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    paths: PathSection = field(default_factory=PathSection)

    # -- construction -----------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        text = Path(path).read_text()  # OSError propagates as an I/O failure
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at byte {e.pos}: {e.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, dotted: dict) -> "RunConfig":
        """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
        d = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            *path, leaf = key.split(".")
            node = d
            for p in path:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return RunConfig.from_dict(d)

    # -- views ------------------------------------------------------------------
    def corruption_config(self) -> CorruptionConfig:
        c = self.corruption
        try:
            return CorruptionConfig(c.occlusion_prob, tuple(c.blur_sigma_range), c.observation_noise)
        except ValueError as e:
            raise ConfigError(f"corruption: {e}") from None

    def dynamics(self) -> MotionDynamics:
        return MotionDynamics(sigma_angle=self.motion.sigma_angle, sigma_translation=self.motion.sigma_translation)

    def augmentation(self) -> Augmentation:
        return Augmentation(self.motion.rotation_deg, tuple(self.motion.scale_range))

    def model_config(self, n: int = 15) -> ModelConfig:
        m, b, d = self.model, self.backbone, self.data
        offsets = tuple(m.frame_offsets) if m.frame_offsets is not None else symmetric_offsets(m.T)
        kw = dict(n=n, H=d.H, W=d.W, patch_size=b.patch_size, embed_dim=b.embed_dim, depth=b.depth,
                  D=m.D, heads=m.heads, layers=m.layers, ffn_mult=m.ffn_mult, head_hidden=m.head_hidden,
                  jfd_mode=m.jfd_mode, mode=m.mode, frame_offsets=offsets, seed=self.seed)
        if self.skeleton.groups is not None:
            kw["groups"] = tuple(tuple(g) for g in self.skeleton.groups)
        try:
            return ModelConfig(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"model: {e}") from None

    def train_config(self) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(lr=t.lr, epochs=t.epochs, batch_size=t.batch_size, seed=self.seed,
                               weight_decay=t.weight_decay, decay_at=tuple(t.decay_at),
                               decay_factor=t.decay_factor)
        except ValueError as e:
            raise ConfigError(f"train: {e}") from None


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {where or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {(where + '.' if where else '') + unknown[0]!r}")
    kw = {}
    for name, value in d.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kw[name] = _build(type(default), value, (where + "." if where else "") + name)
        else:
            kw[name] = value
    return replace(cls(), **kw)
