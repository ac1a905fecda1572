"""Rank-4 float32 tensors and reverse-mode differentiation.

A ``Tensor`` wraps an immutable ``(batch, channels, height, width)`` numpy
array. Operations build a DAG by storing, on each result, its parent tensors
and a vector-Jacobian closure; ``backprop`` walks that DAG once in reverse
topological order. Tensors whose ancestry contains no ``requires_grad`` leaf
carry no graph at all, so forward-only passes stay cheap.

Scalars are tensors of shape ``(1, 1, 1, 1)``.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from . import kernels
from .errors import ContractError, GeometryError, GraphError, NumericError, ShapeError

Shape = tuple[int, int, int, int]


def _as_f32(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float32, copy=True)
    if arr.ndim != 4:
        raise ShapeError(f"tensors are rank-4 (N,C,H,W); got rank {arr.ndim}")
    return np.ascontiguousarray(arr)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by '{op}'")


class Tensor:
    """Immutable dense rank-4 array, optionally recorded on the tape."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_f32(data)
        _check_finite(arr, "leaf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._op = "leaf"

    @classmethod
    def scalar(cls, value: float, requires_grad: bool = False) -> "Tensor":
        return cls(np.full((1, 1, 1, 1), value, dtype=np.float32), requires_grad)

    @classmethod
    def zeros(cls, shape: Shape, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float32), requires_grad)

    @property
    def shape(self) -> Shape:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1, 1, 1):
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.data.shape}")
        return float(self.data[0, 0, 0, 0])

    def detach(self) -> "Tensor":
        return _make(self.data, (), None, "detach")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, grad={self.requires_grad})"

    # arithmetic sugar; floats/ints become constant scale/shift ops
    def __add__(self, other):
        return shift(self, float(other)) if _is_number(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return shift(self, -float(other)) if _is_number(other) else sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), float(other)) if _is_number(other) else sub(other, self)

    def __mul__(self, other):
        return scale(self, float(other)) if _is_number(other) else mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_number(other):
            return divc(self, float(other))
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _is_number(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _make(arr: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    _check_finite(arr, op)
    out = Tensor.__new__(Tensor)
    if arr.flags.writeable and arr.base is None:
        arr.flags.writeable = False
    out.data = arr
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    out._op = op
    return out



def _quiet():
    # overflow at wild inputs surfaces as NumericError via _check_finite,
    # not as a numpy warning
    return np.errstate(over="ignore", invalid="ignore", divide="ignore")


def _reduce_to(shape: Shape, g: np.ndarray) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    axes = tuple(i for i in range(4) if shape[i] == 1 and g.shape[i] != 1)
    out = g.sum(axis=axes, keepdims=True, dtype=np.float32)
    return out


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    with _quiet():
        out = a.data + b.data

    def vjp(g):
        return _reduce_to(a.shape, g), _reduce_to(b.shape, g)

    return _make(out, (a, b), vjp, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    with _quiet():
        out = a.data - b.data

    def vjp(g):
        return _reduce_to(a.shape, g), _reduce_to(b.shape, np.negative(g))

    return _make(out, (a, b), vjp, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    with _quiet():
        out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(a.shape, g * bd), _reduce_to(b.shape, g * ad)

    return _make(out, (a, b), vjp, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "div")
    with _quiet():
        out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g / bd
        gb = -g * ad / (bd * bd)
        return _reduce_to(a.shape, ga), _reduce_to(b.shape, gb)

    return _make(out, (a, b), vjp, "div")


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Skip-connection add; unlike ``add`` it rejects broadcasting."""
    if a.shape != b.shape:
        raise ShapeError(f"residual_add: shapes {a.shape} and {b.shape} differ")
    return add(a, b)


def scale(a: Tensor, c: float) -> Tensor:
    cf = np.float32(c)
    with _quiet():
        out = a.data * cf

    def vjp(g):
        return (g * cf,)

    return _make(out, (a,), vjp, "scale")


def divc(a: Tensor, c: float) -> Tensor:
    cf = np.float32(c)
    out = a.data / cf

    def vjp(g):
        return (g / cf,)

    return _make(out, (a,), vjp, "divc")


def shift(a: Tensor, c: float) -> Tensor:
    out = a.data + np.float32(c)

    def vjp(g):
        return (g,)

    return _make(out, (a,), vjp, "shift")


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, np.float32(0.0))
    mask = a.data > 0  # subgradient at exactly 0 is 0

    def vjp(g):
        return (np.where(mask, g, np.float32(0.0)),)

    return _make(out, (a,), vjp, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data, dtype=np.float32)
    y = out

    def vjp(g):
        return (g * (np.float32(1.0) - y * y),)

    return _make(out, (a,), vjp, "tanh")


def softsign(a: Tensor) -> Tensor:
    denom = np.float32(1.0) + np.abs(a.data)
    out = a.data / denom

    def vjp(g):
        return (g / (denom * denom),)

    return _make(out, (a,), vjp, "softsign")


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise NumericError("sqrt of negative values")
    out = np.sqrt(a.data, dtype=np.float32)
    y = out

    def vjp(g):
        # subgradient 0 at exactly 0, mirroring the relu convention
        safe = np.where(y > 0, y, np.float32(1.0))
        d = np.where(y > 0, g / (np.float32(2.0) * safe), np.float32(0.0))
        return (d,)

    return _make(out, (a,), vjp, "sqrt")


def softmax(a: Tensor, axis: str = "channel") -> Tensor:
    """Softmax across channels per location, or across locations per channel."""
    if axis == "channel":
        red = (1,)
    elif axis == "spatial":
        red = (2, 3)
    else:
        raise ContractError(f"softmax axis must be 'channel' or 'spatial', got {axis!r}")
    m = a.data.max(axis=red, keepdims=True)
    with _quiet():
        e = np.exp(a.data - m, dtype=np.float32)
    s = e.sum(axis=red, keepdims=True, dtype=np.float32)
    y = e / s

    def vjp(g):
        dot = (g * y).sum(axis=red, keepdims=True, dtype=np.float32)
        return (y * (g - dot),)

    return _make(y, (a,), vjp, f"softmax-{axis}")


# ---------------------------------------------------------------------------
# structural ops


def reshape(a: Tensor, shape: Shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"reshape target must be rank-4, got {shape}")
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape {a.shape} -> {shape} changes element count")
    out = a.data.reshape(shape)
    src = a.shape

    def vjp(g):
        return (g.reshape(src),)

    return _make(out, (a,), vjp, "reshape")


def transpose_hw(a: Tensor) -> Tensor:
    out = np.ascontiguousarray(a.data.swapaxes(2, 3))

    def vjp(g):
        return (np.ascontiguousarray(g.swapaxes(2, 3)),)

    return _make(out, (a,), vjp, "transpose_hw")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(1,1,M,K) @ (1,1,K,N) with pinned k-ascending accumulation."""
    if a.shape[:2] != (1, 1) or b.shape[:2] != (1, 1):
        raise ShapeError("matmul expects (1,1,M,K) and (1,1,K,N) tensors")
    if a.shape[3] != b.shape[2]:
        raise ShapeError(f"matmul: inner dims {a.shape[3]} and {b.shape[2]} differ")
    a2 = a.data[0, 0]
    b2 = b.data[0, 0]
    y = kernels.matmul_nn(a2, b2)

    def vjp(g):
        g2 = np.ascontiguousarray(g[0, 0])
        ga = kernels.matmul_nn(g2, np.ascontiguousarray(b2.T))
        gb = kernels.matmul_nn(np.ascontiguousarray(a2.T), g2)
        return ga[None, None], gb[None, None]

    return _make(y[None, None], (a, b), vjp, "matmul")


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor) -> Tensor:
    out = np.full((1, 1, 1, 1), kernels.sum_all(a.data.ravel()), dtype=np.float32)
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0, 0, 0], dtype=np.float32),)

    return _make(out, (a,), vjp, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.full(
        (1, 1, 1, 1), kernels.sum_all(a.data.ravel()) / np.float32(n), dtype=np.float32
    )
    shape = a.shape

    def vjp(g):
        return (np.full(shape, g[0, 0, 0, 0] / np.float32(n), dtype=np.float32),)

    return _make(out, (a,), vjp, "mean")


def channel_mean(a: Tensor) -> Tensor:
    """Spatial mean per (batch, channel); output shape (N,C,1,1)."""
    n, c, h, w = a.shape
    if h * w < 1:
        raise GeometryError("channel_mean needs at least one spatial element")
    sums = kernels.channel_sums(a.data)
    out = (sums / np.float32(h * w)).reshape(n, c, 1, 1)
    shape = a.shape

    def vjp(g):
        return ((np.broadcast_to(g / np.float32(h * w), shape)).astype(np.float32),)

    return _make(out, (a,), vjp, "channel_mean")


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) over zero-padded input.

    ``w`` has shape (outC, inC, kH, kW); ``b`` is a (1, outC, 1, 1) tensor.
    """
    if not isinstance(stride, int) or stride < 1:
        raise ContractError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ContractError(f"padding must be a non-negative int, got {padding!r}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but weight expects {wcin} (weight {w.shape})"
        )
    if b.shape != (1, cout, 1, 1):
        raise ShapeError(f"conv2d: bias shape {b.shape} != (1, {cout}, 1, 1)")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise GeometryError(
            f"conv2d: kernel {kh}x{kw} does not fit padded input {hp}x{wp}"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise GeometryError(f"conv2d: empty output {oh}x{ow}")

    if padding > 0:
        xp = np.zeros((n, cin, hp, wp), dtype=np.float32)
        xp[:, :, padding : padding + h, padding : padding + wd] = x.data
    else:
        xp = x.data
    bflat = np.ascontiguousarray(b.data.reshape(cout))
    y = kernels.conv2d_forward(xp, w.data, bflat, stride, oh, ow)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxp = kernels.conv2d_backward_input(g, w.data, stride, hp, wp)
        gx = np.ascontiguousarray(gxp[:, :, padding : padding + h, padding : padding + wd])
        gw = kernels.conv2d_backward_weight(g, xp, stride, cin, kh, kw)
        gb = kernels.conv2d_backward_bias(g).reshape(1, cout, 1, 1)
        return gx, gw, gb

    return _make(y, (x, w, b), vjp, "conv2d")


def pool2d(x: Tensor, kind: str, window: int, stride: int) -> Tensor:
    if kind not in ("max", "average"):
        raise ContractError(f"pool kind must be 'max' or 'average', got {kind!r}")
    if not isinstance(window, int) or window < 1:
        raise ContractError(f"window must be a positive int, got {window!r}")
    if not isinstance(stride, int) or stride < 1:
        raise ContractError(f"stride must be a positive int, got {stride!r}")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise GeometryError(f"pool2d: window {window} does not fit input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    if oh < 1 or ow < 1:
        raise GeometryError(f"pool2d: empty output {oh}x{ow}")

    if kind == "max":
        y, ay, ax = kernels.maxpool_forward(x.data, window, stride, oh, ow)

        def vjp(g):
            return (kernels.maxpool_backward(np.ascontiguousarray(g), ay, ax, h, w),)

        return _make(y, (x,), vjp, "pool-max")

    y = kernels.avgpool_forward(x.data, window, stride, oh, ow)

    def vjp(g):
        return (kernels.avgpool_backward(np.ascontiguousarray(g), window, stride, h, w),)

    return _make(y, (x,), vjp, "pool-avg")


# ---------------------------------------------------------------------------
# backward pass


def backprop(loss: Tensor, leaves: Iterable[Tensor]) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``loss`` w.r.t. each requested leaf.

    Unreachable leaves get zero tensors. Repeated calls are deterministic
    and leave the graph untouched.
    """
    if not isinstance(loss, Tensor):
        raise GraphError(f"loss must be a Tensor, got {type(loss).__name__}")
    if loss.data.shape != (1, 1, 1, 1):
        raise ContractError(f"backprop needs a scalar loss, got shape {loss.data.shape}")
    leaves = list(leaves)
    for leaf in leaves:
        if not isinstance(leaf, Tensor):
            raise GraphError(f"leaf must be a Tensor, got {type(leaf).__name__}")

    # iterative post-order topological sort over grad-requiring nodes
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1, 1, 1), dtype=np.float32)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        pgrads = node._vjp(g)
        for parent, pg in zip(node._parents, pgrads):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg.astype(np.float32, copy=False) if prev is None else prev + pg

    out: dict[Tensor, Tensor] = {}
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros(leaf.shape, dtype=np.float32)
        g = np.ascontiguousarray(g, dtype=np.float32)
        _check_finite(g, "backprop")
        out[leaf] = _make(g, (), None, "grad")
    return out
