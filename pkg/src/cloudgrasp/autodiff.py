"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A forward pass records nodes on an explicit :class:`Tape`; ``backward`` walks
the tape in exact reverse execution order and accumulates gradients into every
tensor that appeared on it. With no active tape, all ops are plain numpy
evaluation (inference mode).

Everything is 64-bit: the networks here are tiny and the test suite relies on
agreement with central finite differences.
"""

from __future__ import annotations

import io
import struct
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Incompatible operand shapes."""


class RankError(ValueError):
    """Operation requires a scalar (or otherwise fixed-rank) tensor."""


class UninitializedGradientError(RuntimeError):
    """Optimizer step requested for a parameter with no gradient."""


class Tensor:
    """A float64 array plus an optional gradient of the same shape."""

    __slots__ = ("values", "grad", "name")

    def __init__(self, values, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.values.shape})"


class Tape:
    """Ordered record of forward operations for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self):
        return len(self._nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable):
        self._nodes.append((out, parents, backward_fn))

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def tensors(self):
        seen = set()
        for out, parents, _ in self._nodes:
            for t in (out, *parents):
                if id(t) not in seen:
                    seen.add(id(t))
                    yield t


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(tape: Tape, loss: Tensor):
    """Fill ``grad`` for every tensor on the tape with d(loss)/d(tensor).

    Gradients of tensors on the tape are reset to zero first, so repeated
    calls do not accumulate across passes; within a pass each use of a tensor
    accumulates exactly once.
    """
    if loss.values.size != 1:
        raise RankError(f"loss must be scalar, got shape {loss.values.shape}")
    for t in tape.tensors():
        t.grad = None
    loss.grad = np.ones_like(loss.values)
    for out, parents, backward_fn in reversed(tape._nodes):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for parent, g in zip(parents, grads):
            if g is None:
                continue
            # functional accumulation: returned grads may alias upstream
            # buffers, so never mutate them in place
            parent.grad = g if parent.grad is None else parent.grad + g
    for t in tape.tensors():
        if t.grad is None:
            t.grad = np.zeros_like(t.values)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape.record(out, tuple(parents), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.values.shape} and {b.values.shape} "
                         "are not broadcast-compatible") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.values + b.values)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.values.shape),
                                           _unbroadcast(g, b.values.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.values - b.values)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.values.shape),
                                           _unbroadcast(-g, b.values.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.values * b.values)
    return _record(out, (a, b), lambda g: (_unbroadcast(g * b.values, a.values.shape),
                                           _unbroadcast(g * a.values, b.values.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.values / b.values)

    def bwd(g):
        ga = _unbroadcast(g / b.values, a.values.shape)
        gb = _unbroadcast(-g * a.values / (b.values ** 2), b.values.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.values)
    return _record(out, (a,), lambda g: (-g,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.values))
    return _record(out, (a,), lambda g: (g * 0.5 / out.values,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0.0))
    mask = a.values > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.values))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def clamp_min(a, low: float) -> Tensor:
    """max(a, low) elementwise; gradient passes where a > low."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, low))
    mask = a.values > low
    return _record(out, (a,), lambda g: (g * mask,))


# ------------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    if int(np.prod(shape)) != a.values.size and -1 not in np.atleast_1d(shape):
        raise ShapeError(f"cannot reshape {a.values.shape} to {tuple(shape)}")
    out = Tensor(a.values.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.values.shape),))


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.values.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.values[idx])

    def bwd(g):
        ga = np.zeros_like(a.values)
        ga[idx] = g
        return (ga,)

    return _record(out, (a,), bwd)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.values for p in parts], axis=axis))
    sizes = [p.values.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _record(out, parts, bwd)


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.values.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.values.shape).copy(),)

    return _record(out, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.values.size if axis is None else a.values.shape[axis]
    out = Tensor(a.values.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.values.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.values.shape).copy(),)

    return _record(out, (a,), bwd)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient flows to the first argmax (subgradient at ties)."""
    a = _as_tensor(a)
    out = Tensor(a.values.max(axis=axis, keepdims=keepdims))

    def bwd(g):
        ga = np.zeros_like(a.values)
        if axis is None:
            ga.flat[np.argmax(a.values)] = np.asarray(g).reshape(())
            return (ga,)
        idx = np.expand_dims(np.argmax(a.values, axis=axis), axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(ga, idx, gg, axis)
        return (ga,)

    return _record(out, (a,), bwd)


def reduce_min(a, axis=None, keepdims: bool = False) -> Tensor:
    """Min reduction; gradient flows to the first argmin (subgradient at ties)."""
    a = _as_tensor(a)
    out = Tensor(a.values.min(axis=axis, keepdims=keepdims))

    def bwd(g):
        ga = np.zeros_like(a.values)
        if axis is None:
            ga.flat[np.argmin(a.values)] = np.asarray(g).reshape(())
            return (ga,)
        idx = np.expand_dims(np.argmin(a.values, axis=axis), axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(ga, idx, gg, axis)
        return (ga,)

    return _record(out, (a,), bwd)


# ------------------------------------------------------------- linear algebra

def pairwise_dist(a, b, eps: float = 1e-12) -> Tensor:
    """Euclidean distance matrix between rows of a (N,D) and b (M,D).

    Fused primitive: one tape node with O(N*M) memory, smoothed at zero by
    `eps` inside the square root.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
        raise ShapeError(f"pairwise_dist: shapes {av.shape} and {bv.shape}")
    sq = (av * av).sum(axis=1)[:, None] + (bv * bv).sum(axis=1)[None, :] \
        - 2.0 * (av @ bv.T)
    d = np.sqrt(np.maximum(sq, 0.0) + eps)
    out = Tensor(d)

    def bwd(g):
        w = g / d
        ws_a = w.sum(axis=1, keepdims=True)
        ws_b = w.sum(axis=0, keepdims=True)
        ga = ws_a * av - w @ bv
        gb = ws_b.T * bv - w.T @ av
        return ga, gb

    return _record(out, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.values.shape} and {b.values.shape}")
    out = Tensor(a.values @ b.values)
    return _record(out, (a, b), lambda g: (g @ b.values.T, a.values.T @ g))


def dense(x, w, b) -> Tensor:
    """Affine layer x @ w + b for x of shape (N, in), w (in, out), b (out,)."""
    return add(matmul(x, w), b)


def maxpool_points(x, axis: int = 1) -> Tensor:
    """Max over the point axis; exact permutation invariance by construction."""
    return reduce_max(x, axis=axis)


# -------------------------------------------------------------------- losses

def huber(pred, target, delta: float = 1.0) -> Tensor:
    """Huber loss summed over elements: 0.5 r^2 for |r| <= delta, else delta(|r| - delta/2)."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_broadcast(pred, target, "huber")
    r = pred.values - target.values
    small = np.abs(r) <= delta
    vals = np.where(small, 0.5 * r * r, delta * (np.abs(r) - 0.5 * delta))
    out = Tensor(vals.sum())

    def bwd(g):
        dr = np.where(small, r, delta * np.sign(r)) * g
        return (_unbroadcast(dr, pred.values.shape), _unbroadcast(-dr, target.values.shape))

    return _record(out, (pred, target), bwd)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits; numerically stable."""
    logits, targets = _as_tensor(logits), _as_tensor(targets)
    if logits.values.shape != targets.values.shape:
        raise ShapeError(f"bce: logit shape {logits.values.shape} != target shape "
                         f"{targets.values.shape}")
    z, y = logits.values, targets.values
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(per.mean())
    n = z.size

    def bwd(g):
        p = 1.0 / (1.0 + np.exp(-z))
        return ((p - y) * (g / n), None)

    return _record(out, (logits, targets), bwd)


# ------------------------------------------------------------------- conv2d

def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution (cross-correlation): x (N,C,H,W), kernels (O,C,kh,kw)."""
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    xv, kv = x.values, kernels.values
    if xv.ndim != 4 or kv.ndim != 4 or xv.shape[1] != kv.shape[1]:
        raise ShapeError(f"conv2d: input {xv.shape} vs kernels {kv.shape}")
    n, c, h, w = xv.shape
    o, _, kh, kw = kv.shape
    xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for padded input {hp}x{wp}")

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]            # (N, C, ho, wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    wmat = kv.reshape(o, c * kh * kw)
    out_v = (cols @ wmat.T).transpose(0, 2, 1).reshape(n, o, ho, wo)

    parents = [x, kernels]
    if bias is not None:
        bias = _as_tensor(bias)
        out_v = out_v + bias.values.reshape(1, o, 1, 1)
        parents.append(bias)
    out = Tensor(out_v)

    def bwd(g):
        l = ho * wo
        gmat = g.reshape(n, o, l)                           # (N, O, L)
        g_flat = gmat.transpose(0, 2, 1).reshape(n * l, o)  # (N*L, O)
        gk = (g_flat.T @ cols.reshape(n * l, -1)).reshape(kv.shape)
        gcols = (g_flat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:hp - padding or None, padding:wp - padding or None]
        if bias is not None:
            return gx, gk, g.sum(axis=(0, 2, 3))
        return gx, gk

    return _record(out, parents, bwd)


# ----------------------------------------------------------------- batchnorm

class BatchNormState:
    """Running statistics for one batch-norm layer (not trainable)."""

    def __init__(self, num_features: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str) -> Tensor:
    """Batch normalization over axis 0 of a (N, F) tensor.

    `train` uses batch statistics and updates the running estimates in
    `state`; `infer` is a pure function of the running statistics.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"batchnorm mode must be 'train' or 'infer', got {mode!r}")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xv = x.values
    if xv.ndim != 2 or xv.shape[1] != gamma.values.shape[0]:
        raise ShapeError(f"batchnorm: input {xv.shape} vs gamma {gamma.values.shape}")
    eps = state.eps

    if mode == "infer":
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (xv - state.running_mean) * inv
        out = Tensor(xhat * gamma.values + beta.values)

        def bwd_infer(g):
            return (g * gamma.values * inv,
                    (g * xhat).sum(axis=0),
                    g.sum(axis=0))

        return _record(out, (x, gamma, beta), bwd_infer)

    n = xv.shape[0]
    mu = xv.mean(axis=0)
    var = xv.var(axis=0)  # biased, standard for BN
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    out = Tensor(xhat * gamma.values + beta.values)

    m = state.momentum
    state.running_mean = m * state.running_mean + (1 - m) * mu
    state.running_var = m * state.running_var + (1 - m) * var

    def bwd_train(g):
        dxhat = g * gamma.values
        dx = (inv / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(out, (x, gamma, beta), bwd_train)


# ---------------------------------------------------------------- parameters

class ParamSet:
    """Named trainable tensors, non-trainable buffers, and optimizer state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.step = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values, name=name)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, values: np.ndarray):
        if name in self.buffers:
            raise ValueError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.asarray(values, dtype=np.float64)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grads(self):
        for t in self.params.values():
            t.grad = np.zeros_like(t.values)

    def l2_norm_sq(self) -> float:
        return float(sum((t.values ** 2).sum() for t in self.params.values()))

    def clone_values(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            self.params[k].values = np.array(v, dtype=np.float64)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.values)) for t in self.params.values())


def adam_step(params: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One Adam update with bias correction over every trainable parameter."""
    for name, t in params.params.items():
        if t.grad is None:
            raise UninitializedGradientError(f"parameter {name!r} has no gradient")
    params.step += 1
    s = params.step
    for name, t in params.params.items():
        g = t.grad
        m = params._m.setdefault(name, np.zeros_like(t.values))
        v = params._v.setdefault(name, np.zeros_like(t.values))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        params._m[name] = m
        params._v[name] = v
        m_hat = m / (1 - beta1 ** s)
        v_hat = v / (1 - beta2 ** s)
        t.values = t.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not params.all_finite():
        raise FloatingPointError("non-finite parameter after Adam step")


# -------------------------------------------------------------- checkpoints

_MAGIC = b"CGCKPT\x00\x01"
_VERSION = 1


def save_params(params: ParamSet, path: str):
    """Write a flat binary checkpoint; bit-exact round trip guaranteed.

    Layout: magic (8 bytes), version u32, count u32, then per entry:
    name_len u32, name utf-8, rank u32, dims u32 each, float64 LE values.
    Trainable parameters and buffers are stored alike, sorted by name.
    """
    entries = {**{k: t.values for k, t in params.params.items()}, **params.buffers}
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(entries)))
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_params(path: str) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> array mapping."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims).copy()
        off += 8 * n
        out[name] = arr
    return out
