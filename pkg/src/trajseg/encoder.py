"""Motion encoder: lift per-point features, attend over time and across tracks, pool over time."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from . import tensor as tn
from .tensor import Tensor
from .trackdata import feature_dim

__all__ = ["EncoderConfig", "FeaturedTracks", "init_encoder", "encode", "encode_plain"]


@dataclass(frozen=True)
class EncoderConfig:
    model_dim: int = 64
    heads: int = 4
    ff_dim: int = 64
    num_blocks: int = 3
    n_freqs: int = 4
    use_depth: bool = True
    use_pe: bool = True
    use_st_att: bool = True
    temporal_first: bool = True
    extra_dim: int = 0          # per-point channels appended after the track features

    def __post_init__(self):
        if self.model_dim <= 0 or self.heads <= 0 or self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} must be a positive multiple of heads {self.heads}")
        if self.num_blocks < 0 or self.ff_dim <= 0 or self.n_freqs < 0 or self.extra_dim < 0:
            raise ValueError("block count, ff_dim, n_freqs and extra_dim must be non-negative")

    @property
    def input_dim(self) -> int:
        return feature_dim(self.n_freqs, self.use_pe) + self.extra_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeaturedTracks:
    P: Tensor                   # (N, model_dim)
    has_valid: np.ndarray       # (N,) rows backed by at least one valid point

    @property
    def track_count(self) -> int:
        return self.P.shape[0]


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "enc") -> nn.Params:
    p: nn.Params = {}
    d = cfg.model_dim
    nn.init_ff(p, f"{prefix}.lift1", cfg.input_dim, d, d, rng)
    nn.init_ff(p, f"{prefix}.lift2", d, d, d, rng)
    for b in range(cfg.num_blocks):
        names = ("time", "space") if cfg.use_st_att else ("joint",)
        for part in names:
            nn.init_norm(p, f"{prefix}.b{b}.{part}.norm", d)
            nn.init_attention(p, f"{prefix}.b{b}.{part}.attn", d, rng)
        nn.init_norm(p, f"{prefix}.b{b}.ff.norm", d)
        nn.init_ff(p, f"{prefix}.b{b}.ff", d, cfg.ff_dim, d, rng)
    nn.init_norm(p, f"{prefix}.out.norm", d)
    return p


def _lift(params: nn.Params, prefix: str, x: Tensor) -> Tensor:
    h = nn.ff(params, f"{prefix}.lift1", x)
    return tn.add(h, nn.ff(params, f"{prefix}.lift2", tn.relu(h)))


def _self_attn(params, name: str, h: Tensor, mask: np.ndarray, heads: int, hooks) -> Tensor:
    x = nn.norm(params, f"{name}.norm", h)
    return tn.add(h, nn.attention(params, f"{name}.attn", x, x, mask, heads, hooks))


def _ff_block(params, name: str, h: Tensor) -> Tensor:
    return tn.add(h, nn.ff(params, name, nn.norm(params, f"{name}.norm", h)))


def _check_inputs(features: np.ndarray, validity: np.ndarray, cfg: EncoderConfig):
    x = np.asarray(features, dtype=np.float64)
    m = np.asarray(validity, dtype=bool)
    if x.ndim != 3 or m.shape != x.shape[:2]:
        raise ValueError(f"features {x.shape} and validity {m.shape} do not align")
    if x.shape[2] != cfg.input_dim:
        raise ValueError(f"feature dim {x.shape[2]} != configured {cfg.input_dim}")
    return x, m


def _pool(params, prefix: str, h: Tensor, m: np.ndarray, hooks) -> FeaturedTracks:
    h = nn.norm(params, f"{prefix}.out.norm", h)
    if hooks is not None:
        hooks["prepool"] = h
    has_valid = m.any(axis=1)
    pool_mask = nn.safe_key_mask(m)[:, :, None] & np.ones(h.shape, dtype=bool)
    return FeaturedTracks(tn.masked_max(h, pool_mask, axis=1), has_valid)


def encode(params: nn.Params, features: np.ndarray | Tensor, validity: np.ndarray,
           cfg: EncoderConfig, hooks: dict | None = None, prefix: str = "enc") -> FeaturedTracks:
    """(N, T, F) features and (N, T) validity -> P of shape (N, model_dim).

    Invalid points never act as attention keys nor enter the temporal max,
    so their feature values cannot reach P. A track without any valid
    point is pooled over all frames and flagged in ``has_valid``.
    """
    if not cfg.use_st_att:
        return encode_plain(params, features, validity, cfg, hooks, prefix)
    feats = features if isinstance(features, Tensor) else None
    x, m = _check_inputs(features.data if feats is not None else features, validity, cfg)
    h = _lift(params, prefix, feats if feats is not None else tn.tensor(x))
    n, t, d = h.shape
    order = ("time", "space") if cfg.temporal_first else ("space", "time")
    for b in range(cfg.num_blocks):
        for part in order:
            name = f"{prefix}.b{b}.{part}"
            if part == "time":
                h = _self_attn(params, name, h, m, cfg.heads, hooks)
            else:
                hs = tn.transpose(h, (1, 0, 2))
                hs = _self_attn(params, name, hs, m.T, cfg.heads, hooks)
                h = tn.transpose(hs, (1, 0, 2))
        h = _ff_block(params, f"{prefix}.b{b}.ff", h)
    return _pool(params, prefix, h, m, hooks)


def encode_plain(params: nn.Params, features: np.ndarray | Tensor, validity: np.ndarray,
                 cfg: EncoderConfig, hooks: dict | None = None, prefix: str = "enc") -> FeaturedTracks:
    """Baseline with one joint attention over all N*T points per block.

    Memory grows with (N*T)^2, so keep this to small inputs.
    """
    feats = features if isinstance(features, Tensor) else None
    x, m = _check_inputs(features.data if feats is not None else features, validity, cfg)
    h = _lift(params, prefix, feats if feats is not None else tn.tensor(x))
    n, t, d = h.shape
    flat_mask = m.reshape(1, n * t)
    for b in range(cfg.num_blocks):
        hf = tn.reshape(h, (1, n * t, d))
        hf = _self_attn(params, f"{prefix}.b{b}.joint", hf, flat_mask, cfg.heads, hooks)
        h = _ff_block(params, f"{prefix}.b{b}.ff", tn.reshape(hf, (n, t, d)))
    return _pool(params, prefix, h, m, hooks)
