"""Space-time decoupling: the S-ATT stack, temporal (TD), grouped spatial (SD) and coupled attention."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Module, ParamFactory, Tensor
from .synth import validate_groups


class AttentionConfigError(ValueError):
    pass


class AttentionLayer(Module):
    """Pre-norm block: x + MHSA(LN(x)), then + FFN(LN(.)) with ReLU."""

    def __init__(self, D: int, heads: int, ffn_mult: int, pf: ParamFactory, prefix: str):
        if D % heads:
            raise AttentionConfigError(f"token dim {D} not divisible by {heads} heads")
        self.D, self.heads = D, heads
        self.ln1_g = pf.ones(prefix + "ln1_g", (D,))
        self.ln1_b = pf.zeros(prefix + "ln1_b", (D,))
        self.qkv_w = pf.linear(prefix + "qkv_w", D, 3 * D)
        self.qkv_b = pf.zeros(prefix + "qkv_b", (3 * D,))
        self.out_w = pf.linear(prefix + "out_w", D, D, gain=0.5)
        self.out_b = pf.zeros(prefix + "out_b", (D,))
        self.ln2_g = pf.ones(prefix + "ln2_g", (D,))
        self.ln2_b = pf.zeros(prefix + "ln2_b", (D,))
        self.w1 = pf.linear(prefix + "w1", D, ffn_mult * D, gain=np.sqrt(2))
        self.b1 = pf.zeros(prefix + "b1", (ffn_mult * D,))
        self.w2 = pf.linear(prefix + "w2", ffn_mult * D, D, gain=0.5)
        self.b2 = pf.zeros(prefix + "b2", (D,))

    def attend(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Multi-head self-attention over axis -2 of (S, m, D); returns (output, weights)."""
        S, m, D = x.shape
        h, hd = self.heads, D // self.heads
        qkv = nx.reshape(nx.linear(x, self.qkv_w, self.qkv_b), (S, m, 3, h, hd))
        qkv = nx.transpose(qkv, (2, 0, 3, 1, 4))                  # (3, S, h, m, hd)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ nx.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(hd))
        weights = nx.softmax(scores, axis=-1)                    # (S, h, m, m)
        ctx = nx.reshape(nx.transpose(weights @ v, (0, 2, 1, 3)), (S, m, D))
        return nx.linear(ctx, self.out_w, self.out_b), weights

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        a, weights = self.attend(nx.layer_norm(x, self.ln1_g, self.ln1_b))
        x = x + a
        h = nx.layer_norm(x, self.ln2_g, self.ln2_b)
        return x + nx.linear(nx.relu(nx.linear(h, self.w1, self.b1)), self.w2, self.b2), weights


class SAttStack(Module):
    """``layers`` identical attention blocks plus a final norm.

    ``pair_count`` accumulates layers * heads * m^2 for every length-m
    sequence processed; ``capture`` keeps each layer's attention weights.
    """

    def __init__(self, D: int, pf: ParamFactory, prefix: str, layers: int = 4, heads: int = 2, ffn_mult: int = 4):
        self.D, self.num_layers, self.heads = D, layers, heads
        self.layers = [AttentionLayer(D, heads, ffn_mult, pf, f"{prefix}layers.{i}.") for i in range(layers)]
        self.norm_g = pf.ones(prefix + "norm_g", (D,))
        self.norm_b = pf.zeros(prefix + "norm_b", (D,))
        self.pair_count = 0
        self.capture = False
        self.attention_weights: list[np.ndarray] = []

    def __call__(self, tokens: Tensor, pos: Tensor | None = None) -> Tensor:
        """(S, m, D) batch of S independent sequences -> (S, m, D)."""
        if tokens.ndim != 3 or tokens.shape[-1] != self.D:
            raise AttentionConfigError(f"S-ATT expects (S, m, {self.D}) tokens, got {tokens.shape}")
        x = tokens if pos is None else tokens + pos
        S, m, _ = x.shape
        self.pair_count += self.num_layers * self.heads * S * m * m
        if self.capture:
            self.attention_weights = []
        for layer in self.layers:
            x, w = layer(x)
            if self.capture:
                self.attention_weights.append(w.data)
        return nx.layer_norm(x, self.norm_g, self.norm_b)

    def reset_counter(self) -> None:
        self.pair_count = 0


def s_att_forward(stack: SAttStack, tokens: Tensor, pos: Tensor) -> Tensor:
    """Single sequence (m, D) through the stack with position embeddings (m, D)."""
    if tokens.ndim != 2 or tokens.shape != pos.shape:
        raise AttentionConfigError(f"s_att_forward: tokens {tokens.shape} and pos {pos.shape} must both be (m, D)")
    out = stack(nx.reshape(tokens, (1,) + tokens.shape), pos)
    return nx.reshape(out, tokens.shape)


def td_forward(clip_tokens: Tensor, stack: SAttStack, temporal_pos: Tensor, key_index: int) -> Tensor:
    """Per-joint temporal attention.

    ``clip_tokens`` is (B, F, n, D); every joint's F tokens form an
    independent sequence. Returns the key-frame output per joint, (B, n, D).
    """
    B, F, n, D = clip_tokens.shape
    if temporal_pos.shape != (F, D):
        raise AttentionConfigError(f"td_forward: temporal_pos {temporal_pos.shape} != {(F, D)}")
    seq = nx.reshape(nx.transpose(clip_tokens, (0, 2, 1, 3)), (B * n, F, D))
    out = stack(seq, temporal_pos)
    return nx.reshape(out[:, key_index, :], (B, n, D))


def group_layout(groups) -> tuple[list[np.ndarray], np.ndarray]:
    """Bucket groups by size; returns per-size index arrays (num_groups, size) and the inverse order."""
    by_size: dict[int, list] = {}
    for g in groups:
        by_size.setdefault(len(g), []).append(list(g))
    buckets = [np.asarray(v, dtype=np.intp) for _, v in sorted(by_size.items())]
    order = np.concatenate([b.reshape(-1) for b in buckets])
    return buckets, np.argsort(order)


def sd_forward(key_tokens: Tensor, stack: SAttStack, spatial_pos: Tensor, groups) -> Tensor:
    """Attention restricted to each joint group of the key frame; (B, n, D) -> (B, n, D)."""
    B, n, D = key_tokens.shape
    try:
        validate_groups(groups, n)
    except ValueError as e:
        raise AttentionConfigError(str(e)) from None
    x = key_tokens + spatial_pos
    buckets, inverse = group_layout(groups)
    pieces = []
    for idx in buckets:
        G, s = idx.shape
        seq = nx.reshape(nx.take(x, idx, axis=1), (B * G, s, D))
        pieces.append(nx.reshape(stack(seq), (B, G * s, D)))
    joined = pieces[0] if len(pieces) == 1 else nx.concat(pieces, axis=1)
    return nx.take(joined, inverse, axis=1)


def coupled_forward(clip_tokens: Tensor, stack: SAttStack, temporal_pos: Tensor, spatial_pos: Tensor,
                    key_index: int) -> Tensor:
    """Global attention over all F*n tokens; returns the key-frame tokens (B, n, D)."""
    B, F, n, D = clip_tokens.shape
    pos = nx.reshape(temporal_pos, (F, 1, D)) + nx.reshape(spatial_pos, (1, n, D))
    seq = nx.reshape(clip_tokens + pos, (B, F * n, D))
    out = nx.reshape(stack(seq), (B, F, n, D))
    return out[:, key_index]


def aggregate(td_out: Tensor, sd_out: Tensor) -> Tensor:
    """Per-joint concatenation, temporal half first."""
    if td_out.shape != sd_out.shape:
        raise AttentionConfigError(f"aggregate: shapes {td_out.shape} and {sd_out.shape} differ")
    return nx.concat([td_out, sd_out], axis=-1)


class CoordHead(Module):
    """Joint-wise 2-layer net: 2D -> hidden -> (x, y, log b_x, log b_y)."""

    def __init__(self, in_dim: int, pf: ParamFactory, hidden: int = 64, prefix: str = "head."):
        self.w1 = pf.linear(prefix + "w1", in_dim, hidden, gain=np.sqrt(2))
        self.b1 = pf.zeros(prefix + "b1", (hidden,))
        self.w2 = pf.normal(prefix + "w2", (hidden, 4), 0.01)
        self.b2 = pf.zeros(prefix + "b2", (4,))

    def __call__(self, agg: Tensor) -> tuple[Tensor, Tensor]:
        out = nx.linear(nx.relu(nx.linear(agg, self.w1, self.b1)), self.w2, self.b2)
        return out[..., :2], out[..., 2:]


def head_forward(agg: Tensor, head: CoordHead) -> tuple[Tensor, Tensor]:
    """Returns (coords, scale) with scale = exp(log-scale)."""
    coords, log_scale = head(agg)
    return coords, nx.exp(log_scale)
