"""Minimal reverse-mode automatic differentiation over float64 arrays.

Provides exactly the operations the wave-function network needs: valid 2D
convolution, matrix products (shared or batched right operand), elementwise
nonlinearities, softmax, per-position layer normalization, reductions,
reshapes, masking, constant padding/slicing, and an indexed gather used for
periodic padding.  Every op checks operand shapes up front and raises
ShapeError naming the op.

Graphs are recorded implicitly while ``grad_enabled()`` is true (the
default); wrap sampling-only evaluations in ``with no_grad():`` to skip the
tape.  ``backward(loss)`` accumulates into ``.grad`` of the reachable leaf
tensors that require gradients; running backward twice on the same root is
an error, and gradients must be cleared via ``zero_grads`` between steps.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import LcnError, ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"<Tensor {self._op} shape={self.data.shape} grad={self.requires_grad}>"

    # Light operator sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _node(data, op: str, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the leading axes it gained relative to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def _check_suffix(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or sb == ():
        return
    if len(sb) <= len(sa) and sa[len(sa) - len(sb) :] == sb:
        return
    raise ShapeError(op, sa, sb)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("add", a, b)
    return _node(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("sub", a, b)
    return _node(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix("mul", a, b)
    return _node(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if len(sa) < 2 or len(sb) not in (2, 3) or sa[-1] != sb[-2]:
        raise ShapeError("matmul", sa, sb)
    if len(sb) == 3 and (len(sa) != 3 or sa[0] != sb[0]):
        raise ShapeError("matmul", sa, sb)
    out = a.data @ b.data

    def vjp(g):
        if len(sb) == 2:
            ga = g @ b.data.T
            gb = np.tensordot(a.data, g, axes=(tuple(range(len(sa) - 1)),) * 2)
        else:
            ga = g @ b.data.transpose(0, 2, 1)
            gb = a.data.transpose(0, 2, 1) @ g
        return ga, gb

    return _node(out, "matmul", (a, b), vjp)


def transpose_last(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim < 2:
        raise ShapeError("transpose_last", a.data.shape)
    axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    return _node(a.data.transpose(axes), "transpose_last", (a,), lambda g: (g.transpose(axes),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), "relu", (a,), lambda g: (g * pos,))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _node(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _node(y, "exp", (a,), lambda g: (g * y,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, "softmax", (a,), vjp)


def layer_norm(x: Tensor, scale: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis, then apply scale and offset."""
    x, scale, offset = _as_tensor(x), _as_tensor(scale), _as_tensor(offset)
    d = x.data.shape[-1]
    if scale.data.shape != (d,) or offset.data.shape != (d,):
        raise ShapeError("layer_norm", x.data.shape, scale.data.shape, offset.data.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    y = xhat * scale.data + offset.data

    def vjp(g):
        dxhat = g * scale.data
        dscale = (g * xhat).reshape(-1, d).sum(axis=0)
        doffset = g.reshape(-1, d).sum(axis=0)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * ivar
        return dx, dscale, doffset

    return _node(y, "layer_norm", (x, scale, offset), vjp)


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes_t = tuple(range(x.data.ndim)) if axes is None else tuple(np.atleast_1d(axes).tolist())
    count = int(np.prod([x.data.shape[a] for a in axes_t]))
    y = x.data.mean(axis=axes_t, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axes_t)
        return (np.broadcast_to(gg, x.data.shape) / count,)

    return _node(y, "mean", (x,), vjp)


def sum_(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes_t = tuple(range(x.data.ndim)) if axes is None else tuple(np.atleast_1d(axes).tolist())
    y = x.data.sum(axis=axes_t, keepdims=keepdims)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axes_t)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _node(y, "sum", (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if np.prod(x.data.shape, dtype=int) != abs(np.prod(shape, dtype=int)):
        if -1 not in shape:
            raise ShapeError("reshape", x.data.shape, shape)
    src = x.data.shape
    return _node(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all non-batch axes: (B, ...) -> (B, prod(...))."""
    x = _as_tensor(x)
    return reshape(x, (x.data.shape[0], -1))


def conv2d_valid(x: Tensor, k: Tensor) -> Tensor:
    """Valid cross-correlation of (B,H,W,Cin) with a (kh,kw,Cout,Cin) kernel.

    No implicit padding: callers pad first (periodic or zero).
    """
    x, k = _as_tensor(x), _as_tensor(k)
    sx, sk = x.data.shape, k.data.shape
    if len(sx) != 4 or len(sk) != 4 or sx[3] != sk[3] or sk[0] > sx[1] or sk[1] > sx[2]:
        raise ShapeError("conv2d_valid", sx, sk)
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(k.data)
    y = kernels.conv2d_forward(xd, kd)

    def vjp(g):
        g = np.ascontiguousarray(g)
        return kernels.conv2d_grad_input(g, kd), kernels.conv2d_grad_kernel(xd, g)

    return _node(y, "conv2d_valid", (x, k), vjp)


def mask_mul(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 mask; masked entries get exactly zero grad."""
    x = _as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    try:
        y = x.data * m
    except ValueError:
        raise ShapeError("mask_mul", x.data.shape, m.shape) from None
    return _node(y, "mask_mul", (x,), lambda g: (g * m,))


def scale_channels(u: Tensor, s: Tensor) -> Tensor:
    """Channelwise rescale of (B,H,W,d) by per-sample gates (B,d)."""
    u, s = _as_tensor(u), _as_tensor(s)
    su, ss = u.data.shape, s.data.shape
    if len(su) != 4 or ss != (su[0], su[3]):
        raise ShapeError("scale_channels", su, ss)
    sm = s.data[:, None, None, :]
    return _node(
        u.data * sm,
        "scale_channels",
        (u, s),
        lambda g: (g * sm, np.einsum("bhwc,bhwc->bc", g, u.data)),
    )


def pad2d(x: Tensor, pads: tuple[int, int, int, int], value: float = 0.0) -> Tensor:
    """Constant-pad spatial axes of (B,H,W,C) by (top, bottom, left, right)."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("pad2d", x.data.shape)
    t, b, l, r = pads
    y = np.pad(x.data, ((0, 0), (t, b), (l, r), (0, 0)), constant_values=value)
    h, w = x.data.shape[1], x.data.shape[2]
    return _node(y, "pad2d", (x,), lambda g: (g[:, t : t + h, l : l + w, :],))


def slice2d(x: Tensor, rows: tuple[int, int], cols: tuple[int, int]) -> Tensor:
    """Spatial slice of (B,H,W,C): rows and cols are half-open ranges."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("slice2d", x.data.shape)
    r0, r1 = rows
    c0, c1 = cols
    y = x.data[:, r0:r1, c0:c1, :]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, r0:r1, c0:c1, :] = g
        return (gx,)

    return _node(y, "slice2d", (x,), vjp)


def index_last(x: Tensor, j: int) -> Tensor:
    """Select component j of the last axis (e.g. one output head)."""
    x = _as_tensor(x)
    y = x.data[..., j]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., j] = g
        return (gx,)

    return _node(y, "index_last", (x,), vjp)


def take_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather positions of (B,P,d) by an index vector (Q,); -1 yields zeros.

    Used to build periodically padded frames from wrap tables.
    """
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError("take_positions", x.data.shape)
    b, p, d = x.data.shape
    idx = np.asarray(idx, dtype=np.int64)
    safe = np.where(idx < 0, p, idx)
    ext = np.concatenate([x.data, np.zeros((b, 1, d))], axis=1)
    y = ext[:, safe, :]

    def vjp(g):
        acc = np.zeros((p + 1, b * d))
        gt = g.transpose(1, 0, 2).reshape(len(idx), b * d)
        np.add.at(acc, safe, gt)
        return (acc[:p].reshape(p, b, d).transpose(1, 0, 2),)

    return _node(y, "take_positions", (x,), vjp)


def flip2(k: Tensor) -> Tensor:
    """Reverse the two leading (spatial) axes; rotates a kernel by 180 degrees."""
    k = _as_tensor(k)
    if k.data.ndim < 2:
        raise ShapeError("flip2", k.data.shape)
    return _node(np.ascontiguousarray(k.data[::-1, ::-1]), "flip2", (k,), lambda g: (g[::-1, ::-1],))


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates leaf ``.grad``."""
    if loss.data.size != 1:
        raise LcnError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise LcnError("backward already ran on this graph; reset gradients and rebuild")
    loss._consumed = True
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
