"""Patch-mixer backbone and the Joint-centric Feature Decoder (three token constructions)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Module, ParamFactory, Tensor

JFD_MODES = ("fc", "conv", "coord_embed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2


@dataclass
class FeatureMap:
    grid: Tensor    # (N, Hp*Wp, C), row-major over patch positions
    pooled: Tensor  # (N, C)


def patchify(images: Tensor, P: int) -> Tensor:
    """(N, H, W) -> (N, (H/P)*(W/P), P*P), patches in row-major order."""
    N, H, W = images.shape
    x = nx.reshape(images, (N, H // P, P, W // P, P))
    x = nx.transpose(x, (0, 1, 3, 2, 4))
    return nx.reshape(x, (N, (H // P) * (W // P), P * P))


class Backbone(Module):
    """Patch embedding + learned patch positions + ``depth`` mixer blocks.

    A block normalises, mixes tokens by adding a projection of the mean token
    to every patch, then applies a residual per-patch feed-forward net.
    """

    def __init__(self, cfg: BackboneConfig, H: int, W: int, pf: ParamFactory, prefix: str = "backbone."):
        if H % cfg.patch_size or W % cfg.patch_size:
            raise ConfigError(f"image {H}x{W} not divisible by patch_size {cfg.patch_size}")
        self.cfg = cfg
        P, C = cfg.patch_size, cfg.embed_dim
        self.num_patches = (H // P) * (W // P)
        self.embed_w = pf.linear(prefix + "embed_w", P * P, C)
        self.embed_b = pf.zeros(prefix + "embed_b", (C,))
        self.pos = pf.normal(prefix + "pos", (self.num_patches, C), 0.5)
        self.blocks = [MixerBlock(C, pf, f"{prefix}blocks.{i}.") for i in range(cfg.depth)]
        self.norm_g = pf.ones(prefix + "norm_g", (C,))
        self.norm_b = pf.zeros(prefix + "norm_b", (C,))

    def __call__(self, images: Tensor) -> FeatureMap:
        images = nx.tensor(images) if not isinstance(images, Tensor) else images
        if images.ndim != 3:
            raise ConfigError(f"backbone expects (N, H, W) images, got {images.shape}")
        P = self.cfg.patch_size
        if images.shape[1] % P or images.shape[2] % P:
            raise ConfigError(f"image {images.shape[1]}x{images.shape[2]} not divisible by patch_size {P}")
        x = nx.linear(patchify(images, P), self.embed_w, self.embed_b) + self.pos
        for blk in self.blocks:
            x = blk(x)
        grid = nx.layer_norm(x, self.norm_g, self.norm_b)
        return FeatureMap(grid=grid, pooled=nx.mean_axis(grid, axis=1))


class MixerBlock(Module):
    def __init__(self, C: int, pf: ParamFactory, prefix: str):
        self.ln_g = pf.ones(prefix + "ln_g", (C,))
        self.ln_b = pf.zeros(prefix + "ln_b", (C,))
        self.mix_w = pf.linear(prefix + "mix_w", C, C)
        self.w1 = pf.linear(prefix + "w1", C, 2 * C, gain=np.sqrt(2))
        self.b1 = pf.zeros(prefix + "b1", (2 * C,))
        self.w2 = pf.linear(prefix + "w2", 2 * C, C)
        self.b2 = pf.zeros(prefix + "b2", (C,))

    def __call__(self, x: Tensor) -> Tensor:
        h = nx.layer_norm(x, self.ln_g, self.ln_b)
        h = h + nx.mean_axis(h, axis=1, keepdims=True) @ self.mix_w
        return x + nx.linear(nx.relu(nx.linear(h, self.w1, self.b1)), self.w2, self.b2)


# -- joint-centric feature decoders ------------------------------------------
class JfdFC(Module):
    """Pooled features -> one linear map of width n*D, split evenly into n tokens."""

    def __init__(self, C: int, n: int, D: int, pf: ParamFactory, prefix: str = "jfd."):
        self.n, self.D = n, D
        self.w = pf.linear(prefix + "w", C, n * D)
        self.b = pf.zeros(prefix + "b", (n * D,))

    def __call__(self, fmap: FeatureMap) -> Tensor:
        pooled = fmap.pooled
        if pooled.shape[-1] != self.w.shape[0]:
            raise ConfigError(f"jfd_fc: pooled dim {pooled.shape[-1]} != weight rows {self.w.shape[0]}")
        out = nx.linear(pooled, self.w, self.b)
        return nx.reshape(out, pooled.shape[:-1] + (self.n, self.D))


class JfdConv(Module):
    """1x1 conv to n joint maps, each flattened through one shared linear layer to D dims."""

    def __init__(self, C: int, num_patches: int, n: int, D: int, pf: ParamFactory, prefix: str = "jfd."):
        self.n, self.D = n, D
        self.conv_w = pf.linear(prefix + "conv_w", C, n)
        self.conv_b = pf.zeros(prefix + "conv_b", (n,))
        self.ffn_w = pf.linear(prefix + "ffn_w", num_patches, D)
        self.ffn_b = pf.zeros(prefix + "ffn_b", (D,))

    def joint_maps(self, grid: Tensor) -> Tensor:
        """(N, Np, C) -> (N, n, Np)."""
        return nx.swapaxes(nx.linear(grid, self.conv_w, self.conv_b), -1, -2)

    def __call__(self, fmap: FeatureMap) -> Tensor:
        grid = fmap.grid
        if grid.shape[-1] != self.conv_w.shape[0] or grid.shape[-2] != self.ffn_w.shape[0]:
            raise ConfigError(f"jfd_conv: grid {grid.shape} does not match conv {self.conv_w.shape} "
                              f"/ ffn {self.ffn_w.shape}")
        return nx.linear(self.joint_maps(grid), self.ffn_w, self.ffn_b)


def sincos_frequencies(D: int) -> np.ndarray:
    return np.geomspace(1.0, 100.0, D // 4)


def sincos_encode(coords: Tensor, D: int) -> Tensor:
    """(..., 2) coordinates -> (..., D): per scalar, interleaved [sin, cos] over D/4 bands."""
    if D % 4:
        raise ConfigError(f"sine-cosine encoding needs D divisible by 4, got {D}")
    freqs = sincos_frequencies(D).astype(coords.dtype)
    lead = coords.shape[:-1]
    ang = nx.reshape(coords, lead + (2, 1)) * freqs                      # (..., 2, D/4)
    pair = nx.stack([nx.sin(ang), nx.cos(ang)], axis=-1)                # (..., 2, D/4, 2)
    return nx.reshape(pair, lead + (D,))


class JfdCoordEmbed(Module):
    """Coarse regression -> sine-cosine position encoding + learned per-joint class embedding."""

    def __init__(self, C: int, n: int, D: int, pf: ParamFactory, prefix: str = "jfd."):
        if D % 2:
            raise ConfigError(f"coord_embed needs even D, got {D}")
        if D % 4:
            raise ConfigError(f"coord_embed needs D divisible by 4, got {D}")
        self.n, self.D = n, D
        self.aux_w = pf.normal(prefix + "aux_w", (C, 4 * n), 0.01)
        self.aux_b = pf.zeros(prefix + "aux_b", (4 * n,))
        self.class_embed = pf.normal(prefix + "class_embed", (n, D), 0.5)

    def coarse(self, pooled: Tensor) -> tuple[Tensor, Tensor]:
        """Auxiliary (coords, log_scale), each (N, n, 2)."""
        out = nx.reshape(nx.linear(pooled, self.aux_w, self.aux_b), pooled.shape[:-1] + (self.n, 4))
        return out[..., :2], out[..., 2:]

    def encode(self, coords: Tensor) -> Tensor:
        return sincos_encode(coords, self.D) + self.class_embed

    def __call__(self, fmap: FeatureMap) -> Tensor:
        coords, _ = self.coarse(fmap.pooled)
        return self.encode(coords)


def build_jfd(mode: str, C: int, num_patches: int, n: int, D: int, pf: ParamFactory) -> Module:
    if mode == "fc":
        return JfdFC(C, n, D, pf)
    if mode == "conv":
        return JfdConv(C, num_patches, n, D, pf)
    if mode == "coord_embed":
        return JfdCoordEmbed(C, n, D, pf)
    raise ConfigError(f"unknown jfd_mode {mode!r}; expected one of {JFD_MODES}")
