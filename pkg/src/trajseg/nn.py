"""Functional layers over a flat ``name -> Tensor`` parameter dict."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .tensor import Tensor

Params = dict[str, Tensor]


def init_linear(params: Params, name: str, fan_in: int, fan_out: int,
                rng: np.random.Generator) -> None:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    params[f"{name}.w"] = tn.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), f"{name}.w")
    params[f"{name}.b"] = tn.parameter(np.zeros(fan_out), f"{name}.b")


def init_norm(params: Params, name: str, dim: int) -> None:
    params[f"{name}.g"] = tn.parameter(np.ones(dim), f"{name}.g")
    params[f"{name}.b"] = tn.parameter(np.zeros(dim), f"{name}.b")


def linear(params: Params, name: str, x: Tensor) -> Tensor:
    return tn.add(tn.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def norm(params: Params, name: str, x: Tensor) -> Tensor:
    return tn.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_ff(params: Params, name: str, d_in: int, d_hidden: int, d_out: int, rng) -> None:
    init_linear(params, f"{name}.fc1", d_in, d_hidden, rng)
    init_linear(params, f"{name}.fc2", d_hidden, d_out, rng)


def ff(params: Params, name: str, x: Tensor) -> Tensor:
    return linear(params, f"{name}.fc2", tn.relu(linear(params, f"{name}.fc1", x)))


def init_attention(params: Params, name: str, dim: int, rng) -> None:
    for part in ("q", "k", "v", "o"):
        init_linear(params, f"{name}.{part}", dim, dim, rng)


def safe_key_mask(mask: np.ndarray) -> np.ndarray:
    """Rows with no valid key attend everywhere instead.

    Such rows only ever produce values at invalid positions, which are
    masked out of every later attention and of the final pooling.
    """
    m = np.asarray(mask, dtype=bool)
    empty = ~m.any(axis=-1, keepdims=True)
    return m | empty


def attention(params: Params, name: str, q_in: Tensor, kv_in: Tensor, key_mask: np.ndarray | None,
              heads: int, hooks: dict | None = None) -> Tensor:
    """Multi-head attention over axis 1 of (B, S, D) inputs.

    ``key_mask`` is (B, S_k) boolean; masked keys get exactly zero weight.
    """
    b, sq, d = q_in.shape
    sk = kv_in.shape[1]
    if d % heads:
        raise ValueError(f"dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x: Tensor, s: int) -> Tensor:
        return tn.transpose(tn.reshape(x, (b, s, heads, dh)), (0, 2, 1, 3))

    q = split(linear(params, f"{name}.q", q_in), sq)
    k = split(linear(params, f"{name}.k", kv_in), sk)
    v = split(linear(params, f"{name}.v", kv_in), sk)
    scores = tn.mul(tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    mask = None if key_mask is None else safe_key_mask(key_mask)[:, None, None, :]
    weights = tn.softmax(scores, mask)
    if hooks is not None:
        hooks.setdefault(name, []).append(weights)
    out = tn.matmul(weights, v)
    out = tn.reshape(tn.transpose(out, (0, 2, 1, 3)), (b, sq, d))
    return linear(params, f"{name}.o", out)
