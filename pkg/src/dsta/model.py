"""The full DSTA regressor: backbone -> JFD -> space-time decoupling -> joint-wise head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .attention import (
    CoordHead,
    SAttStack,
    aggregate,
    coupled_forward,
    sd_forward,
    td_forward,
)
from .backbone import JFD_MODES, Backbone, BackboneConfig, ConfigError, JfdCoordEmbed, build_jfd
from .numerics import Module, ParamFactory, Tensor
from .synth import validate_groups

MODES = ("full", "td_only", "sd_only", "coupled", "single_frame")


@dataclass(frozen=True)
class ModelConfig:
    n: int = 15
    groups: tuple = ((0, 1, 2), (3, 4, 5), (6, 7, 8), (9, 10, 11), (12, 13, 14))
    H: int = 64
    W: int = 48
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    D: int = 32
    heads: int = 2
    layers: int = 4
    ffn_mult: int = 4
    head_hidden: int = 64
    jfd_mode: str = "conv"
    mode: str = "full"
    frame_offsets: tuple = (-1, 0, 1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(int(j) for j in g) for g in self.groups))
        object.__setattr__(self, "frame_offsets", tuple(int(o) for o in self.frame_offsets))
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.jfd_mode not in JFD_MODES:
            raise ConfigError(f"unknown jfd_mode {self.jfd_mode!r}; expected one of {JFD_MODES}")
        if 0 not in self.frame_offsets or len(set(self.frame_offsets)) != len(self.frame_offsets):
            raise ConfigError(f"frame_offsets must be distinct and include 0, got {self.frame_offsets}")
        if list(self.frame_offsets) != sorted(self.frame_offsets):
            raise ConfigError(f"frame_offsets must be increasing, got {self.frame_offsets}")
        try:
            validate_groups(self.groups, self.n)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @property
    def T(self) -> int:
        """Temporal span: the largest |offset|."""
        return max(abs(o) for o in self.frame_offsets)

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.patch_size, self.embed_dim, self.depth)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = [list(g) for g in self.groups]
        d["frame_offsets"] = list(self.frame_offsets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def symmetric_offsets(T: int) -> tuple:
    return tuple(range(-T, T + 1))


@dataclass
class ModelOutput:
    coords: Tensor      # (B, n, 2)
    log_scale: Tensor   # (B, n, 2)
    aux: tuple | None = None  # coord_embed only: (coarse coords, coarse log-scale), each (B, F, n, 2)
    tokens: Tensor | None = None

    @property
    def scale(self) -> Tensor:
        return nx.exp(self.log_scale)


class DstaModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        pf = ParamFactory(cfg.seed)
        D = cfg.D
        self.backbone = Backbone(cfg.backbone, cfg.H, cfg.W, pf)
        self.jfd = build_jfd(cfg.jfd_mode, cfg.embed_dim, self.backbone.num_patches, cfg.n, D, pf)
        self.temporal_pos = pf.normal("temporal_pos", (2 * cfg.T + 1, D), 0.1)
        self.spatial_pos = pf.normal("spatial_pos", (cfg.n, D), 0.1)
        self.td = SAttStack(D, pf, "td.", cfg.layers, cfg.heads, cfg.ffn_mult)
        self.sd = SAttStack(D, pf, "sd.", cfg.layers, cfg.heads, cfg.ffn_mult)
        self.coupled = SAttStack(D, pf, "coupled.", cfg.layers, cfg.heads, cfg.ffn_mult)
        self.head = CoordHead(2 * D, pf, cfg.head_hidden)

    @property
    def stacks(self) -> dict[str, SAttStack]:
        return {"td": self.td, "sd": self.sd, "coupled": self.coupled}

    def joint_tokens(self, frames: Tensor) -> tuple[Tensor, tuple | None]:
        """(B, F, H, W) -> tokens (B, F, n, D), plus auxiliary coarse outputs for coord_embed."""
        B, F, H, W = frames.shape
        fmap = self.backbone(nx.reshape(frames, (B * F, H, W)))
        aux = None
        if isinstance(self.jfd, JfdCoordEmbed):
            coords, log_scale = self.jfd.coarse(fmap.pooled)
            tokens = self.jfd.encode(coords)
            aux = (nx.reshape(coords, (B, F, self.cfg.n, 2)), nx.reshape(log_scale, (B, F, self.cfg.n, 2)))
        else:
            tokens = self.jfd(fmap)
        return nx.reshape(tokens, (B, F, self.cfg.n, self.cfg.D)), aux

    def __call__(self, observations, data_T: int | None = None, mode: str | None = None) -> ModelOutput:
        return dsta_forward(observations, self, mode=mode, data_T=data_T)


def select_frames(observations: np.ndarray, data_T: int, offsets: tuple) -> np.ndarray:
    idx = [data_T + o for o in offsets]
    if min(idx) < 0 or max(idx) >= observations.shape[1]:
        raise ConfigError(f"frame offsets {offsets} need span {max(abs(o) for o in offsets)}, "
                          f"data provides T={data_T}")
    return observations[:, idx]


def dsta_forward(observations, model: DstaModel, mode: str | None = None, data_T: int | None = None) -> ModelOutput:
    """Run one mode on a batch of clips.

    ``observations`` is (B, 2T+1, H, W) (or one clip without the batch axis)
    with the key frame at index ``data_T`` (default: the centre). Modes that
    produce one token per joint duplicate it to keep the head input at 2D.
    """
    cfg = model.cfg
    mode = mode or cfg.mode
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    obs = observations.data if isinstance(observations, Tensor) else np.asarray(observations)
    if obs.ndim == 3:
        obs = obs[None]
    if data_T is None:
        data_T = (obs.shape[1] - 1) // 2
    if (obs.shape[2], obs.shape[3]) != (cfg.H, cfg.W):
        raise ConfigError(f"observations are {obs.shape[2]}x{obs.shape[3]}, model expects {cfg.H}x{cfg.W}")
    offsets = (0,) if mode in ("single_frame", "sd_only") else cfg.frame_offsets
    frames = select_frames(obs, data_T, offsets)
    frames = nx.Tensor(frames.astype(model.head.w1.dtype, copy=False))
    tokens, aux = model.joint_tokens(frames)
    key = offsets.index(0)
    pos_idx = [o + cfg.T for o in offsets]
    tpos = nx.take(model.temporal_pos, pos_idx, axis=0)
    if mode in ("full", "single_frame"):
        agg = aggregate(td_forward(tokens, model.td, tpos, key),
                        sd_forward(tokens[:, key], model.sd, model.spatial_pos, cfg.groups))
    elif mode == "td_only":
        t = td_forward(tokens, model.td, tpos, key)
        agg = aggregate(t, t)
    elif mode == "sd_only":
        s = sd_forward(tokens[:, key], model.sd, model.spatial_pos, cfg.groups)
        agg = aggregate(s, s)
    else:
        c = coupled_forward(tokens, model.coupled, tpos, model.spatial_pos, key)
        agg = aggregate(c, c)
    coords, log_scale = model.head(agg)
    return ModelOutput(coords=coords, log_scale=log_scale, aux=aux, tokens=tokens)
