"""Minimal dense tensor library with reverse-mode automatic differentiation.

All values are float64. Each differentiable operation records a graph node
(parents plus per-parent gradient functions) on its output tensor; calling
``backward`` on a scalar loss propagates gradients in reverse topological
order, accumulating across fan-out.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "GraphError",
    "as_tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "tsum",
    "tmean",
    "relu",
    "gelu",
    "log",
    "exp",
    "sqrt",
    "softmax_lastaxis",
    "softmax_rows",
    "layer_norm",
    "conv1d",
    "conv2d",
    "pool",
    "embedding",
    "topo_order",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input values lie outside the operation's numeric domain."""


class GraphError(RuntimeError):
    """The autodiff graph was used incorrectly (non-scalar loss, cycle)."""


class Tensor:
    """A dense float64 array that may participate in the autodiff graph.

    ``grad`` is populated by ``backward`` for every tensor with
    ``requires_grad=True`` reachable from the loss. ``_parents`` and
    ``_grad_fns`` describe the producing operation; leaves have neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fns", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._grad_fns: tuple = ()
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; constants are promoted and never require grad
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


class no_grad:
    """Context manager: operations inside record no graph nodes, so forward
    passes that never call backward() skip the bookkeeping cost."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _make(data: np.ndarray, parents: Sequence[Tensor],
          grad_fns: Sequence[Callable[[np.ndarray], np.ndarray]]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fns = tuple(grad_fns)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), (lambda g: _unbroadcast(g, a.shape),
                                lambda g: _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), (lambda g: _unbroadcast(g, a.shape),
                                lambda g: -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(data, (a, b), (lambda g: _unbroadcast(g * b.data, a.shape),
                                lambda g: _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), (lambda g: g * s,))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)
    mask = (a.data > 0.0).astype(np.float64)
    return _make(data, (a,), (lambda g: g * mask,))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    local = cdf + x * pdf
    return _make(data, (a,), (lambda g: g * local,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    data = np.log(a.data)
    return _make(data, (a,), (lambda g: g / a.data,))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, (a,), (lambda g: g * data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative inputs")
    data = np.sqrt(a.data)
    return _make(data, (a,), (lambda g: g * 0.5 / data,))


# ---------------------------------------------------------------------------
# structural ops


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    old = a.shape
    return _make(data, (a,), (lambda g: g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)
    return _make(data, (a,), (lambda g: g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn_for(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        return fn

    return _make(data, tuple(tensors), tuple(fn_for(i) for i in range(len(tensors))))


def slice_axis(a: Tensor, axis: int, lo: int, hi: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)
    data = a.data[idx]

    def fn(g):
        dx = np.zeros_like(a.data)
        dx[idx] = g
        return dx

    return _make(data, (a,), (fn,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is None:
            return np.full(a.shape, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.shape).copy()

    return _make(data, (a,), (fn,))


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return _make(data, (a, b), (ga, gb))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: ids of any shape index table [V, d] -> [*ids.shape, d]."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DomainError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(
            f"token id out of range [0, {table.shape[0]}): min={ids.min()}, max={ids.max()}")
    data = table.data[ids]

    def fn(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return dt

    return _make(data, (table,), (fn,))


# ---------------------------------------------------------------------------
# normalization and softmax


def softmax_lastaxis(a: Tensor) -> Tensor:
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax input contains non-finite values")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return _make(y, (a,), (fn,))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor; stabilized by per-row max shift."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a rank-2 tensor, got shape {x.shape}")
    return softmax_lastaxis(x)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each trailing-axis row to zero mean / unit variance, then
    apply gain ``gamma`` and shift ``beta`` (both shaped [d])."""
    if eps <= 0:
        raise DomainError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm gamma/beta must have shape ({d},), got {gamma.shape} / {beta.shape}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = sqrt(add(var, Tensor(np.full(var.shape, eps))))
    xhat = mul(centered, _reciprocal(inv))
    return add(mul(xhat, gamma), beta)


def _reciprocal(a: Tensor) -> Tensor:
    data = 1.0 / a.data
    return _make(data, (a,), (lambda g: -g * data * data,))


# ---------------------------------------------------------------------------
# convolution and pooling


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid cross-correlation: x [..., L, c_in] * kernels [c_out, c_in, w]
    -> [..., L', c_out] with L' = floor((L - w) / stride) + 1."""
    if kernels.ndim != 3:
        raise ShapeError(f"conv1d kernels must be rank 3, got {kernels.shape}")
    c_out, c_in, w = kernels.shape
    L = x.shape[-2]
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if w > L:
        raise ShapeError(f"conv1d kernel width {w} exceeds input length {L}")
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >= 1, got {stride}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, w, axis=-2)
    win = win[..., ::stride, :, :]  # [..., L', c_in, w]
    data = np.einsum("...lcw,ocw->...lo", win, kernels.data)
    Lp = data.shape[-2]

    def gx(g):
        dx = np.zeros_like(x.data)
        for j in range(w):
            # each kernel tap j contributes to x positions j, j+s, ...
            contrib = np.einsum("...lo,oc->...lc", g, kernels.data[:, :, j])
            dx[..., j:j + stride * Lp:stride, :] += contrib
        return dx

    def gk(g):
        wflat = win.reshape(-1, Lp, c_in, w)
        gflat = g.reshape(-1, Lp, c_out)
        return np.einsum("blcw,blo->ocw", wflat, gflat)

    return _make(data, (x, kernels), (gx, gk))


def conv2d(x: Tensor, kernels: Tensor, stride=1) -> Tensor:
    """Valid cross-correlation: x [..., H, W, c_in] * kernels
    [c_out, c_in, kh, kw] -> [..., H', W', c_out]."""
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d kernels must be rank 4, got {kernels.shape}")
    c_out, c_in, kh, kw = kernels.shape
    if x.ndim < 3 or x.shape[-1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    H, W = x.shape[-3], x.shape[-2]
    if kh > H or kw > W:
        raise ShapeError(f"conv2d kernel ({kh}x{kw}) exceeds input plane ({H}x{W})")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(-3, -2))
    win = win[..., ::sh, ::sw, :, :, :]  # [..., H', W', c_in, kh, kw]
    data = np.einsum("...hwcij,ocij->...hwo", win, kernels.data)
    Hp, Wp = data.shape[-3], data.shape[-2]

    def gx(g):
        dx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                contrib = np.einsum("...hwo,oc->...hwc", g, kernels.data[:, :, i, j])
                dx[..., i:i + sh * Hp:sh, j:j + sw * Wp:sw, :] += contrib
        return dx

    def gk(g):
        wflat = win.reshape(-1, Hp, Wp, c_in, kh, kw)
        gflat = g.reshape(-1, Hp, Wp, c_out)
        return np.einsum("bhwcij,bhwo->ocij", wflat, gflat)

    return _make(data, (x, kernels), (gx, gk))


def pool(x: Tensor, kind: str, window, stride=None) -> Tensor:
    """Per-window reduction over the spatial axes preceding the channel axis.

    ``window`` an int pools the axis at -2 (1-D layout [..., L, c]); a pair
    pools axes (-3, -2) (2-D layout [..., H, W, c]). ``stride`` defaults to
    ``window``. ``kind`` is "max" or "mean"; max routes gradient to the first
    maximum in each window.
    """
    if kind not in ("max", "mean"):
        raise DomainError(f"pool kind must be 'max' or 'mean', got {kind!r}")
    if isinstance(window, int):
        window = (window,)
    else:
        window = tuple(window)
    if stride is None:
        stride = window
    elif isinstance(stride, int):
        stride = (stride,) * len(window)
    else:
        stride = tuple(stride)
    nsp = len(window)
    axes = tuple(range(-1 - nsp, -1))
    for ax, w in zip(axes, window):
        if w > x.shape[ax]:
            raise ShapeError(f"pool window {window} exceeds input extent {x.shape}")
    win = np.lib.stride_tricks.sliding_window_view(x.data, window, axis=axes)
    # win: [..., *outpos, c, *window]; subsample output positions by stride
    sl = [slice(None)] * win.ndim
    for k, s in enumerate(stride):
        sl[win.ndim - 1 - 2 * nsp + k] = slice(None, None, s)
    win = win[tuple(sl)]
    red_axes = tuple(range(win.ndim - nsp, win.ndim))
    out_shape = win.shape[:win.ndim - nsp]  # [..., *outpos, c]
    wsize = int(np.prod(window))

    if kind == "mean":
        data = win.mean(axis=red_axes)

        def fn(g):
            dx = np.zeros_like(x.data)
            _scatter_windows(dx, None, g / wsize, window, stride, nsp)
            return dx
    else:
        flat = win.reshape(out_shape + (wsize,))
        arg = flat.argmax(axis=-1)
        data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

        def fn(g):
            dx = np.zeros_like(x.data)
            _scatter_windows(dx, arg, g, window, stride, nsp)
            return dx

    return _make(data, (x,), (fn,))


def _scatter_windows(dx, arg, g, window, stride, nsp):
    """Accumulate window gradients back into dx (mean: arg None, max: arg)."""
    offsets = np.ndindex(*window)
    out_sp = g.shape[-1 - nsp:-1]
    for off in offsets:
        if arg is None:
            contrib = g
        else:
            flat_off = 0
            for o, w in zip(off, window):
                flat_off = flat_off * w + o
            contrib = g * (arg == flat_off)
        idx = [slice(None)] * dx.ndim
        for k in range(nsp):
            ax = dx.ndim - 1 - nsp + k
            idx[ax] = slice(off[k], off[k] + stride[k] * out_sp[k], stride[k])
        dx[tuple(idx)] += contrib


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root: Tensor) -> list:
    """Reverse-postorder (topological) listing of the graph under root.

    Raises GraphError if a cycle is detected.
    """
    order = []
    state = {}  # id -> 0 visiting, 1 done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 0
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            st = state.get(id(parent))
            if st == 0:
                raise GraphError("cycle detected in autodiff graph")
            if st is None:
                state[id(parent)] = 0
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 1
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any requires_grad tensor")
    order = topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        for parent, fn in zip(node._parents, node._grad_fns):
            if not parent.requires_grad:
                continue
            pg = fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
