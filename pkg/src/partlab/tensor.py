"""Minimal float64 tensor library with reverse-mode automatic differentiation.

Ops record onto a thread-local tape while gradient recording is enabled and at
least one input is tracked; ``backward`` replays the tape in exact reverse
execution order and frees it. Only the operations the diffusion engine needs
exist here. All payloads are C-contiguous float64 arrays.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_local = threading.local()


def _st():
    if not hasattr(_local, "tape"):
        _local.tape = []
        _local.enabled = True
        _local.strict_finite = False
    return _local


@contextmanager
def no_grad():
    st = _st()
    prev = st.enabled
    st.enabled = False
    try:
        yield
    finally:
        st.enabled = prev


def grad_enabled() -> bool:
    return _st().enabled


def set_strict_finite(flag: bool) -> None:
    """When on, every op output is scanned for NaN/Inf (tests only; slow)."""
    _st().strict_finite = flag


class Tensor:
    """Dense float64 array, immutable once produced by an op.

    Leaves (parameters, inputs) are created directly and may have their
    ``data`` swapped between graphs by an optimizer; anything returned by an
    op must never be mutated.
    """

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # operator sugar; every route goes through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    st = _st()
    if st.strict_finite and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value produced by an op")
    out._from_op = True
    if st.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        st.tape.append((out, inputs, bwd))
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss; fills ``grad`` on tracked leaves.

    The whole thread-local tape is consumed and freed; one live graph per
    thread at a time.
    """
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss")
    st = _st()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, bwd in reversed(st.tape):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gt in zip(inputs, bwd(g)):
            if gt is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gt if acc is None else acc + gt
            if not t._from_op:
                leaves[id(t)] = t
    for key, leaf in leaves.items():
        if key in grads:
            leaf.grad = grads[key]
    st.tape.clear()


def clear_tape() -> None:
    _st().tape.clear()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def texp(x: Tensor) -> Tensor:
    out = Tensor(np.exp(x.data))
    return _record(out, (x,), lambda g: (g * out.data,))


def tlog(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def tsqrt(x: Tensor) -> Tensor:
    out = Tensor(np.sqrt(x.data))
    return _record(out, (x,), lambda g: (g * (0.5 / out.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)))
    return _record(out, (x,), lambda g: (g * out.data * (1.0 - out.data),))


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * s)

    def bwd(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _record(out, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(x.data, lo, hi))
    inside = (x.data >= lo) & (x.data <= hi)
    return _record(out, (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------- reductions

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _record(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, x.shape).copy(),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------- structural

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: (g.transpose(inv),))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), bwd)


# ------------------------------------------------------------------- linalg

def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = gb = None
        # batch dims may broadcast; matrix dims always match the operand's
        if _needs_grad(a):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if _needs_grad(b):
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record(out, (a, b), bwd)


def softmax_lastdim(x: Tensor, scale: float = 1.0) -> Tensor:
    """Row-wise softmax of ``scale * x`` over the last axis, max-stabilized."""
    # attention rows can be large (32x32 queries); stay in one buffer
    y = np.multiply(x.data, scale)
    y -= y.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        gx = np.multiply(g, y)
        dot = gx.sum(axis=-1, keepdims=True)
        dot *= -1.0
        gx += y * dot  # gx = y*g - y*dot = y*(g - dot)
        gx *= scale
        return (gx,)

    return _record(out, (x,), bwd)


# ------------------------------------------------------------------ spatial

def conv2d_3x3(x: Tensor, w: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1, NCHW, weight (OC, C, 3, 3)."""
    bsz, cin, h, wd = x.shape
    oc = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * h * wd, cin * 9)
    wmat = w.data.reshape(oc, cin * 9)
    out = Tensor((col @ wmat.T).reshape(bsz, h, wd, oc).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * h * wd, oc)
        gw = (g2.T @ col).reshape(oc, cin, 3, 3) if _needs_grad(w) else None
        if not _needs_grad(x):
            return None, gw
        dcol = (g2 @ wmat).reshape(bsz, h, wd, cin, 3, 3)
        gxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                gxp[:, :, ki:ki + h, kj:kj + wd] += dcol[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return gxp[:, :, 1:-1, 1:-1], gw

    return _record(out, (x, w), bwd)


def avg_pool2d(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; spatial dims must be even."""
    bsz, c, h, wd = x.shape
    r = x.data.reshape(bsz, c, h // 2, 2, wd // 2, 2)
    out = Tensor(r.mean(axis=(3, 5)))

    def bwd(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        return (gx,)

    return _record(out, (x,), bwd)


_LIN_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _lin_coords(n_in: int, n_out: int):
    key = (n_in, n_out)
    hit = _LIN_CACHE.get(key)
    if hit is None:
        # half-pixel centers: out pixel j samples input at (j+0.5)*n_in/n_out - 0.5
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        w1 = pos - i0
        hit = (i0, i1, w1)
        _LIN_CACHE[key] = hit
    return hit


def _resize_axis(data: np.ndarray, n_out: int) -> np.ndarray:
    # resizes the last axis
    i0, i1, w1 = _lin_coords(data.shape[-1], n_out)
    return data[..., i0] * (1.0 - w1) + data[..., i1] * w1


def _resize_axis_back(g: np.ndarray, n_in: int) -> np.ndarray:
    i0, i1, w1 = _lin_coords(n_in, g.shape[-1])
    out = np.zeros(g.shape[:-1] + (n_in,), dtype=g.dtype)
    np.add.at(out, (..., i0), g * (1.0 - w1))
    np.add.at(out, (..., i1), g * w1)
    return out


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize of the trailing two axes, half-pixel centers."""
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be at least 1x1")
    h, w = x.shape[-2], x.shape[-1]
    a = _resize_axis(x.data, out_w)
    a = np.swapaxes(_resize_axis(np.swapaxes(a, -1, -2), out_h), -1, -2)
    out = Tensor(a)

    def bwd(g):
        gg = np.swapaxes(_resize_axis_back(np.swapaxes(g, -1, -2), h), -1, -2)
        gg = _resize_axis_back(gg, w)
        return (gg,)

    return _record(out, (x,), bwd)


# ------------------------------------------------------------------- losses

BCE_EPS = 1e-6


def bce_loss(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    p = clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    one = Tensor(1.0)
    loss = sub(mul(Tensor(-t), tlog(p)), mul(Tensor(1.0 - t), tlog(sub(one, p))))
    return tmean(loss)


def mse_loss(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target)
    d = sub(pred, t)
    return tmean(mul(d, d))


# -------------------------------------------------------------- group norm

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Composed from primitives so the tape differentiates it for free.

    x is NCHW; gamma/beta are (C,) scale and shift.
    """
    bsz, c, h, w = x.shape
    g = reshape(x, (bsz, groups, (c // groups) * h * w))
    mu = tmean(g, axis=2, keepdims=True)
    cen = sub(g, mu)
    var = tmean(mul(cen, cen), axis=2, keepdims=True)
    norm = div(cen, tsqrt(add(var, Tensor(eps))))
    norm = reshape(norm, (bsz, c, h, w))
    return add(mul(norm, reshape(gamma, (1, c, 1, 1))), reshape(beta, (1, c, 1, 1)))
