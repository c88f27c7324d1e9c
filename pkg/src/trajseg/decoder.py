"""Tracks decoder: motion-only attention with semantics injected after weighting.

Three fusion layouts share the same head:

* decoupled (default): an encoder layer attends over motion features only,
  then concatenates semantics and applies a feed-forward to build a memory;
  a decoder layer self-attends over motion and cross-attends into that memory.
* ``moe_mode=False``: semantics are fused into the point features before the
  motion encoder (see ``decode_moe``); the decoder itself is unchanged.
* ``msde_mode=False``: motion and semantics are concatenated and processed by
  plain self-attention layers with no cross-attention path.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from . import tensor as tn
from .encoder import FeaturedTracks
from .tensor import Tensor

__all__ = ["DecoderConfig", "init_decoder", "decode", "decode_moe", "decode_msde_off",
           "moe_features", "LOGIT_CLAMP"]

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class DecoderConfig:
    model_dim: int = 64
    heads: int = 8
    ff_dim: int = 512
    semantic_dim: int = 16
    use_dino: bool = True
    moe_mode: bool = True
    msde_mode: bool = True
    depth: int = 1

    def __post_init__(self):
        if self.depth < 1 or self.ff_dim <= 0 or self.semantic_dim < 0 or self.heads <= 0:
            raise ValueError("depth, ff_dim and heads must be positive")
        dims = [self.model_dim] if self.msde_mode else [self.model_dim + self.semantic_dim]
        for d in dims:
            if d % self.heads:
                raise ValueError(f"attention dim {d} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return asdict(self)


def init_decoder(cfg: DecoderConfig, rng: np.random.Generator, prefix: str = "dec") -> nn.Params:
    p: nn.Params = {}
    d, s = cfg.model_dim, cfg.semantic_dim
    if cfg.msde_mode:
        for i in range(cfg.depth):
            e = f"{prefix}.enc{i}"
            nn.init_norm(p, f"{e}.attn.norm", d)
            nn.init_attention(p, f"{e}.attn.attn", d, rng)
            nn.init_norm(p, f"{e}.ff.norm", d)
            nn.init_ff(p, f"{e}.ff", d + s, cfg.ff_dim, d, rng)
        for i in range(cfg.depth):
            q = f"{prefix}.dec{i}"
            nn.init_norm(p, f"{q}.self.norm", d)
            nn.init_attention(p, f"{q}.self.attn", d, rng)
            nn.init_norm(p, f"{q}.cross.norm", d)
            nn.init_norm(p, f"{q}.cross.mem_norm", d)
            nn.init_attention(p, f"{q}.cross.attn", d, rng)
            nn.init_norm(p, f"{q}.ff.norm", d)
            nn.init_ff(p, f"{q}.ff", d, cfg.ff_dim, d, rng)
        head_dim = d
    else:
        j = d + s
        for i in range(2 * cfg.depth):
            e = f"{prefix}.joint{i}"
            nn.init_norm(p, f"{e}.attn.norm", j)
            nn.init_attention(p, f"{e}.attn.attn", j, rng)
            nn.init_norm(p, f"{e}.ff.norm", j)
            nn.init_ff(p, f"{e}.ff", j, cfg.ff_dim, j, rng)
        head_dim = j
    nn.init_norm(p, f"{prefix}.head.norm", head_dim)
    nn.init_linear(p, f"{prefix}.head", head_dim, 1, rng)
    return p


def _semantics(S, n: int, cfg: DecoderConfig) -> Tensor:
    if cfg.semantic_dim == 0:
        return tn.tensor(np.zeros((n, 0)))
    if isinstance(S, Tensor):
        s = S
    else:
        s = tn.tensor(np.asarray(S, dtype=np.float64))
    if s.shape != (n, cfg.semantic_dim):
        raise ValueError(f"semantic features {s.shape} do not match ({n}, {cfg.semantic_dim})")
    if not cfg.use_dino:
        return tn.tensor(np.zeros((n, cfg.semantic_dim)))
    return s


def _head(params, prefix: str, x: Tensor) -> Tensor:
    logit = nn.linear(params, f"{prefix}.head", nn.norm(params, f"{prefix}.head.norm", x))
    n = logit.shape[1]
    logit = tn.clip(tn.reshape(logit, (n,)), -LOGIT_CLAMP, LOGIT_CLAMP)
    return tn.sigmoid(logit)


def _attend(params, name: str, h: Tensor, kv: Tensor | None, mask, heads: int, hooks,
            mem_norm: str | None = None) -> Tensor:
    x = nn.norm(params, f"{name}.norm", h)
    src = x if kv is None else nn.norm(params, mem_norm, kv)
    return tn.add(h, nn.attention(params, f"{name}.attn", x, src, mask, heads, hooks))


def decode(params: nn.Params, featured: FeaturedTracks, S, cfg: DecoderConfig,
           hooks: dict | None = None, prefix: str = "dec") -> Tensor:
    """Per-track dynamic probabilities, shape (N,)."""
    if not cfg.msde_mode:
        return decode_msde_off(params, featured, S, cfg, hooks, prefix)
    n, d = featured.P.shape
    if d != cfg.model_dim:
        raise ValueError(f"P has dim {d}, decoder expects {cfg.model_dim}")
    s = tn.reshape(_semantics(S, n, cfg), (1, n, cfg.semantic_dim))
    mask = featured.has_valid[None, :]
    motion = tn.reshape(featured.P, (1, n, d))

    memory = motion
    for i in range(cfg.depth):
        e = f"{prefix}.enc{i}"
        memory = _attend(params, f"{e}.attn", memory, None, mask, cfg.heads, hooks)
        fused = tn.concat([nn.norm(params, f"{e}.ff.norm", memory), s], axis=-1)
        memory = tn.add(memory, nn.ff(params, f"{e}.ff", fused))

    q = motion
    for i in range(cfg.depth):
        name = f"{prefix}.dec{i}"
        q = _attend(params, f"{name}.self", q, None, mask, cfg.heads, hooks)
        q = _attend(params, f"{name}.cross", q, memory, mask, cfg.heads, hooks,
                    mem_norm=f"{name}.cross.mem_norm")
        q = tn.add(q, nn.ff(params, f"{name}.ff", nn.norm(params, f"{name}.ff.norm", q)))
    return _head(params, prefix, q)


def decode_msde_off(params: nn.Params, featured: FeaturedTracks, S, cfg: DecoderConfig,
                    hooks: dict | None = None, prefix: str = "dec") -> Tensor:
    """Semantics concatenated to P before any attention; self-attention only."""
    n, d = featured.P.shape
    s = _semantics(S, n, cfg)
    h = tn.reshape(tn.concat([featured.P, s], axis=-1), (1, n, d + cfg.semantic_dim))
    mask = featured.has_valid[None, :]
    for i in range(2 * cfg.depth):
        e = f"{prefix}.joint{i}"
        h = _attend(params, f"{e}.attn", h, None, mask, cfg.heads, hooks)
        h = tn.add(h, nn.ff(params, f"{e}.ff", nn.norm(params, f"{e}.ff.norm", h)))
    return _head(params, prefix, h)


def decode_moe(params: nn.Params, featured_with_semantics: FeaturedTracks, S, cfg: DecoderConfig,
               hooks: dict | None = None, prefix: str = "dec") -> Tensor:
    """Decoder half of the early-fusion layout.

    The caller encodes point features that already carry S (see
    ``moe_features``); decoding is then identical to ``decode``.
    """
    return decode(params, featured_with_semantics, S, cfg, hooks, prefix)


def moe_features(features: np.ndarray, S, cfg: DecoderConfig) -> np.ndarray:
    """Broadcast per-track semantics over time and append them to every point."""
    x = np.asarray(features, dtype=np.float64)
    n, t, _ = x.shape
    s = np.asarray(S, dtype=np.float64).reshape(n, cfg.semantic_dim)
    if not cfg.use_dino:
        s = np.zeros_like(s)
    return np.concatenate([x, np.broadcast_to(s[:, None, :], (n, t, cfg.semantic_dim))], axis=-1)
