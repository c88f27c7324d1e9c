"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the trajectory encoder/decoder need are provided.
Every op records its parents and a backward closure on the output
tensor; :meth:`Tensor.backward` replays them in reverse topological
order, visiting each node once.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError", "tensor", "parameter",
    "add", "sub", "mul", "neg", "matmul", "concat", "slice_", "reshape",
    "transpose", "softmax", "layer_norm", "relu", "sigmoid", "exp", "log",
    "clip", "masked_max", "dropout", "sum_", "mean", "where_mask",
    "gradcheck", "GradcheckReport", "AdamState", "adam_step",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]

_ids = itertools.count(1)


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A value or gradient is NaN or infinite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"at most 4 dims supported, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.parents = parents if self.requires_grad else ()
        self.backward_fn = backward_fn if self.requires_grad else None
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> "Tape":
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        tape = Tape.from_root(self)
        tape.run(self, np.asarray(grad, dtype=np.float64))
        return tape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return slice_(self, idx)


@dataclass
class Tape:
    """Topologically ordered op records reachable from a root tensor."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                if p.node_id not in seen:
                    stack.append((p, False))
        return cls(order)

    def run(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {root.node_id: seed}
        for node in reversed(self.nodes):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node.backward_fn is None:
                # leaf: keep the gradient
                node._accumulate(g)
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data + b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data - b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data * b.data, parents=(a, b),
                  backward_fn=lambda g: (_unbroadcast(g * b.data, a.shape),
                                         _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, parents=(a,), backward_fn=lambda g: (-g,))


def where_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Zero ``a`` wherever the (broadcastable) boolean ``mask`` is False."""
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, 0.0)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (_unbroadcast(np.where(m, g, 0.0), a.shape),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    # maximum (unlike where) keeps NaN visible to the divergence checks
    return Tensor(np.maximum(a.data, 0.0), parents=(a,), backward_fn=lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor(s, parents=(a,), backward_fn=lambda g: (g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return Tensor(e, parents=(a,), backward_fn=lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), parents=(a,), backward_fn=lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), parents=(a,), backward_fn=lambda g: (g * inside,))


# ---------------------------------------------------------------- structural

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch mismatch {a.shape} @ {b.shape}") from exc

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return Tensor(out, parents=(a, b), backward_fn=backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat mismatch {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(out, parents=tuple(ts), backward_fn=backward)


def slice_(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor(out, parents=(a,), backward_fn=backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(np.transpose(a.data, axes), parents=(a,),
                  backward_fn=lambda g: (np.transpose(g, inv),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, parents=(a,), backward_fn=backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------- reductions / nn

def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is a boolean array broadcastable to ``a``; False entries get
    exactly zero weight and their logits never influence the result.
    """
    x = a.data
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not m.any(axis=-1).all():
            raise ValueError("softmax row has every position masked")
        x = np.where(m, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor(s, parents=(a,), backward_fn=backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        return dx, gg, gb

    return Tensor(out, parents=(a, gamma, beta), backward_fn=backward)


def masked_max(a: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Max over ``axis`` ignoring positions where ``mask`` is False.

    The gradient flows only to the selected (first) argmax entry.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not m.any(axis=axis).all():
        raise ValueError("masked_max row has every position masked")
    x = np.where(m, a.data, -np.inf)
    arg = np.argmax(x, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor(out, parents=(a,), backward_fn=backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return Tensor(a.data * keep, parents=(a,), backward_fn=lambda g: (g * keep,))


# ---------------------------------------------------------------- gradcheck

@dataclass
class GradcheckReport:
    max_rel_err: float
    per_input: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6,
              tol: float = 1e-4, floor: float = 1e-6, seed: int = 0) -> GradcheckReport:
    """Compare tape gradients of ``f`` against central finite differences.

    Non-scalar outputs are reduced with a fixed random projection so every
    output coordinate contributes. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    proj: list[np.ndarray] = []

    def scalar(vals: Sequence[np.ndarray], track: bool) -> tuple[Tensor, list[Tensor]]:
        ts = [Tensor(v, requires_grad=track) for v in vals]
        out = f(*ts)
        if not proj:
            proj.append(np.random.default_rng(seed).standard_normal(out.shape))
        if not np.all(np.isfinite(out.data)):
            raise NonFiniteError("gradcheck: function produced non-finite values")
        return sum_(mul(out, proj[0])), ts

    loss, ts = scalar(arrays, True)
    loss.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
    errs = []
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = scalar(arrays, False)[0].data.item()
            flat[j] = orig - eps
            fm = scalar(arrays, False)[0].data.item()
            flat[j] = orig
            nflat[j] = (fp - fm) / (2.0 * eps)
        a = analytic[k]
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("gradcheck: non-finite analytic gradient")
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        errs.append(float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0)
    return GradcheckReport(max(errs) if errs else 0.0, errs, tol)


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-4, wd: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One Adam update with decoupled weight decay, applied in place.

    Raises :class:`NonFiniteError` without touching any parameter when a
    gradient contains NaN/inf.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if wd:
            p.data *= 1.0 - lr * wd
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# ---------------------------------------------------------------- checkpoints

_CKPT_MAGIC = b"TSEG"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays; temp file + rename so readers never see a partial file."""
    path = Path(path)
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != _CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != _CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if off + 8 * n > len(buf):
                raise CheckpointError("truncated checkpoint")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    return out
