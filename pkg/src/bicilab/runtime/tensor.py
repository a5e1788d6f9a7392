"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operators the Deep ACE models need are provided. Every op builds a
new node that remembers its parents and a closure mapping the output gradient
to one gradient per parent; :func:`backward` walks the graph in reverse
topological order. Inputs are never modified.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} holds non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __neg__ = lambda self: neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    out._op = op
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Leaf gradients are overwritten, not accumulated. Interior nodes drop their
    parent links afterwards so the graph can be garbage collected.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad and g is not None:
                node.grad = g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
        node._parents = ()
        node._backward = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    z = a.data
    # split by sign so exp never overflows
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def prelu(x, a) -> Tensor:
    """max(0, x) + a * min(0, x); ``a`` broadcasts against ``x``."""
    x, a = as_tensor(x), as_tensor(a)
    _check_broadcast(x, a, "prelu")
    pos = x.data > 0
    out = np.where(pos, x.data, a.data * x.data)

    def bw(g):
        gx = np.where(pos, g, g * a.data)
        ga = _unbroadcast(np.where(pos, 0.0, g * x.data), a.shape)
        return gx, ga

    return _node(out, (x, a), bw, "prelu")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def global_layer_norm(x, gamma, beta, eps: float = 1e-8) -> Tensor:
    """Normalise each batch item over (channels, time); per-channel gain and shift.

    ``x`` is (N, C, T) or (C, T); ``gamma``/``beta`` are (C, 1). A constant
    item normalises to exactly zero, so the output is ``beta``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ValueError(f"gLN expects (C, T) or (N, C, T), got {x.shape}")
    c = x.shape[-2]
    if gamma.shape != (c, 1) or beta.shape != (c, 1):
        raise ValueError(f"gLN gamma/beta must be ({c}, 1), got {gamma.shape} and {beta.shape}")
    axes = (-2, -1)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    flat = np.ptp(x.data.reshape(*x.shape[:-2], -1), axis=-1)
    xc = np.where((flat == 0)[..., None, None], 0.0, xc)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        dxhat = g * gamma.data
        gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        return gx, gg, gb

    return _node(out, (x, gamma, beta), bw, "gln")


# -- convolution ---------------------------------------------------------------

def _windows(xp: np.ndarray, k: int, stride: int, dilation: int) -> np.ndarray:
    span = (k - 1) * dilation + 1
    return sliding_window_view(xp, span, axis=-1)[..., ::stride, ::dilation]


def _conv_forward(xp, w, stride, dilation, groups):
    n, cin, _ = xp.shape
    cout, cin_g, k = w.shape
    win = _windows(xp, k, stride, dilation)  # (N, Cin, T', K)
    if groups == 1:
        return np.einsum("nitk,oik->not", win, w, optimize=True)
    if groups == cin == cout and cin_g == 1:
        return np.einsum("nctk,ck->nct", win, w[:, 0, :], optimize=True)
    tw = win.shape[2]
    wg = win.reshape(n, groups, cin_g, tw, k)
    ww = w.reshape(groups, cout // groups, cin_g, k)
    return np.einsum("ngitk,goik->ngot", wg, ww, optimize=True).reshape(n, cout, tw)


def _conv_input_grad(g, w, stride, dilation, groups, length):
    """Adjoint of :func:`_conv_forward` w.r.t. its (padded) input of ``length`` samples."""
    n, cout, tout = g.shape
    _, cin_g, k = w.shape
    cin = cin_g * groups
    gx = np.zeros((n, cin, length))
    if groups == 1:
        cols = np.einsum("not,oik->nikt", g, w, optimize=True)
    elif groups == cin == cout and cin_g == 1:
        cols = np.einsum("nct,ck->nckt", g, w[:, 0, :], optimize=True)
    else:
        gg = g.reshape(n, groups, cout // groups, tout)
        ww = w.reshape(groups, cout // groups, cin_g, k)
        cols = np.einsum("ngot,goik->ngikt", gg, ww, optimize=True).reshape(n, cin, k, tout)
    stop = stride * (tout - 1) + 1
    for j in range(k):
        start = j * dilation
        gx[:, :, start:start + stop:stride] += cols[:, :, j, :]
    return gx


def _conv_weight_grad(xp, g, k, stride, dilation, groups):
    n, cin, _ = xp.shape
    _, cout, tout = g.shape
    win = _windows(xp, k, stride, dilation)
    if groups == 1:
        return np.einsum("not,nitk->oik", g, win, optimize=True)
    if groups == cin == cout:
        return np.einsum("nct,nctk->ck", g, win, optimize=True)[:, None, :]
    cin_g = cin // groups
    wg = win.reshape(n, groups, cin_g, tout, k)
    gg = g.reshape(n, groups, cout // groups, tout)
    return np.einsum("ngot,ngitk->goik", gg, wg, optimize=True).reshape(cout, cin_g, k)


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return reshape(x, (1, *x.shape)), True
    if x.ndim != 3:
        raise ValueError(f"expected (C, T) or (N, C, T) input, got shape {x.shape}")
    return x, False


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def crop(a, length: int) -> Tensor:
    """Keep the first ``length`` samples of the last axis."""
    a = as_tensor(a)
    if length >= a.shape[-1]:
        return a

    def bw(g):
        out = np.zeros(a.shape)
        out[..., :length] = g
        return (out,)

    return _node(a.data[..., :length], (a,), bw, "crop")


def conv_output_length(length: int, k: int, stride: int = 1, padding: int = 0, dilation: int = 1) -> int:
    return (length + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
    """1-D cross-correlation. ``x``: (N, C_in, T) or (C_in, T); ``w``: (C_out, C_in/groups, K)."""
    x, w = as_tensor(x), as_tensor(w)
    x, squeeze = _as_batch(x)
    n, cin, t = x.shape
    if w.ndim != 3:
        raise ValueError(f"conv1d kernels must be (C_out, C_in/groups, K), got {w.shape}")
    cout, cin_g, k = w.shape
    if cin % groups or cout % groups or cin_g * groups != cin:
        raise ValueError(
            f"conv1d: input has C_in={cin} channels but kernels expect C_in/groups={cin_g} "
            f"with groups={groups} (C_out={cout})"
        )
    tout = conv_output_length(t, k, stride, padding, dilation)
    if tout < 1:
        raise ValueError(f"conv1d: input length T={t} too short for K={k}, dilation={dilation}, padding={padding}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    y = _conv_forward(xp, w.data, stride, dilation, groups)[:, :, :tout]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ValueError(f"conv1d bias must be ({cout},), got {b.shape}")
        y = y + b.data[:, None]
        parents.append(b)

    def bw(g):
        gx = _conv_input_grad(g, w.data, stride, dilation, groups, xp.shape[-1])
        if padding:
            gx = gx[:, :, padding:padding + t]
        gw = _conv_weight_grad(xp, g, k, stride, dilation, groups)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    out = _node(y, parents, bw, "conv1d")
    return reshape(out, out.shape[1:]) if squeeze else out


def conv1d_transposed(x, w, b=None, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution, the adjoint of :func:`conv1d` w.r.t. its input.

    ``w`` has shape (C_in, C_out, K); output length is ``(T - 1) * stride + K``.
    """
    x, w = as_tensor(x), as_tensor(w)
    x, squeeze = _as_batch(x)
    n, cin, t = x.shape
    if w.ndim != 3 or w.shape[0] != cin:
        raise ValueError(f"conv1d_transposed: input has C_in={cin} channels, kernels have shape {w.shape}")
    _, cout, k = w.shape
    length = (t - 1) * stride + k
    y = _conv_input_grad(x.data, w.data, stride, 1, 1, length)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ValueError(f"conv1d_transposed bias must be ({cout},), got {b.shape}")
        y = y + b.data[:, None]
        parents.append(b)

    def bw(g):
        gx = _conv_forward(g, w.data, stride, 1, 1)[:, :, :t]
        gw = _conv_weight_grad(g, x.data, k, stride, 1, 1)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    out = _node(y, parents, bw, "conv1d_transposed")
    return reshape(out, out.shape[1:]) if squeeze else out


# -- losses ---------------------------------------------------------------------

def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse: prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    return mean(d * d)


def bce_with_logits(logits, target) -> Tensor:
    """Mean binary cross entropy of sigmoid(logits) against 0/1 targets, computed stably."""
    z, y = as_tensor(logits), as_tensor(target)
    if z.shape != y.shape:
        raise ValueError(f"bce: logits {z.shape} vs target {y.shape}")
    zd, yd = z.data, y.data
    losses = np.maximum(zd, 0) - zd * yd + np.log1p(np.exp(-np.abs(zd)))
    n = zd.size
    ez = np.exp(-np.abs(zd))
    sig = np.where(zd >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def bw(g):
        return g * (sig - yd) / n, g * (-zd) / n

    return _node(np.asarray(losses.mean()), (z, y), bw, "bce")
