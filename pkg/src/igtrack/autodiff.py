"""Minimal reverse-mode autodiff over numpy arrays.

A Var wraps an ndarray, remembers how it was produced, and accumulates
gradients on backward(). Only the handful of ops the tracker needs are
implemented: elementwise arithmetic, min/max clamping, slicing, stack,
reductions, log/exp/sqrt, relu, softmax pieces, strided valid convolution
and depthwise cross-correlation.

Summation order is fixed (row-major numpy reductions), so repeated runs are
bit-identical.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting when accumulating gradients."""
    if grad.shape == shape:
        return grad
    # sum extra leading axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    __slots__ = ("data", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accum(self, g):
        g = _sum_to_shape(np.asarray(g, dtype=self.data.dtype), self.data.shape)
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or g is self.data else g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Reverse-mode sweep from this node. A graph may be swept once."""
        if self._consumed:
            raise TapeError("backward() already ran through this graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("implicit gradient only for scalars")
            grad = np.ones_like(self.data)
        topo: list[Var] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            node._consumed = True
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        other = as_var(other, self.data.dtype)
        out = Var(self.data + other.data, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(g))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Var(-self.data, (self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        other = as_var(other, self.data.dtype)
        out = Var(self.data - other.data, (self, other))
        out._backward = lambda g: (self._accum(g), other._accum(-g))
        return out

    def __rsub__(self, other):
        return as_var(other, self.data.dtype) - self

    def __mul__(self, other):
        other = as_var(other, self.data.dtype)
        out = Var(self.data * other.data, (self, other))
        out._backward = lambda g: (
            self._accum(g * other.data),
            other._accum(g * self.data),
        )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other, self.data.dtype)
        out = Var(self.data / other.data, (self, other))
        out._backward = lambda g: (
            self._accum(g / other.data),
            other._accum(-g * self.data / (other.data * other.data)),
        )
        return out

    def __rtruediv__(self, other):
        return as_var(other, self.data.dtype) / self

    # -- indexing / shaping ----------------------------------------------

    def __getitem__(self, idx):
        out = Var(self.data[idx], (self,))

        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        out._backward = bw
        return out

    def reshape(self, *shape):
        out = Var(self.data.reshape(*shape), (self,))
        out._backward = lambda g: self._accum(g.reshape(self.data.shape))
        return out

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Var(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def as_var(x, dtype=None) -> Var:
    if isinstance(x, Var):
        return x
    # python scalars adopt the partner operand's dtype so float32 graphs
    # are not silently promoted to float64
    if dtype is not None and not isinstance(x, np.ndarray):
        return Var(np.asarray(x, dtype=dtype))
    return Var(np.asarray(x))


# -- transcendental / clamping ops ---------------------------------------


def exp(x: Var) -> Var:
    e = np.exp(x.data)
    out = Var(e, (x,))
    out._backward = lambda g: x._accum(g * e)
    return out


def log(x: Var) -> Var:
    out = Var(np.log(x.data), (x,))
    out._backward = lambda g: x._accum(g / x.data)
    return out


def sqrt(x: Var) -> Var:
    s = np.sqrt(x.data)
    out = Var(s, (x,))
    out._backward = lambda g: x._accum(g * 0.5 / s)
    return out


def maximum(a, b) -> Var:
    dt = a.data.dtype if isinstance(a, Var) else b.data.dtype
    a, b = as_var(a, dt), as_var(b, dt)
    out = Var(np.maximum(a.data, b.data), (a, b))
    mask = a.data >= b.data  # ties route the gradient to the first argument
    out._backward = lambda g: (a._accum(g * mask), b._accum(g * ~mask))
    return out


def minimum(a, b) -> Var:
    dt = a.data.dtype if isinstance(a, Var) else b.data.dtype
    a, b = as_var(a, dt), as_var(b, dt)
    out = Var(np.minimum(a.data, b.data), (a, b))
    mask = a.data <= b.data
    out._backward = lambda g: (a._accum(g * mask), b._accum(g * ~mask))
    return out


def clip(x: Var, lo: float, hi: float) -> Var:
    out = Var(np.clip(x.data, lo, hi), (x,))
    mask = (x.data >= lo) & (x.data <= hi)
    out._backward = lambda g: x._accum(g * mask)
    return out


def relu(x: Var) -> Var:
    out = Var(np.maximum(x.data, 0), (x,))
    mask = x.data > 0
    out._backward = lambda g: x._accum(g * mask)
    return out


def stack(vars_: list[Var], axis: int = 0) -> Var:
    out = Var(np.stack([v.data for v in vars_], axis=axis), tuple(vars_))

    def bw(g):
        for i, v in enumerate(vars_):
            v._accum(np.take(g, i, axis=axis))

    out._backward = bw
    return out


def softmax(x: Var, axis: int = -1) -> Var:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Var(s, (x,))

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accum(s * (g - dot))

    out._backward = bw
    return out


def log_softmax(x: Var, axis: int = -1) -> Var:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = Var(z - lse, (x,))
    s = np.exp(z - lse)

    def bw(g):
        x._accum(g - s * g.sum(axis=axis, keepdims=True))

    out._backward = bw
    return out


def matmul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.data @ b.data, (a, b))
    out._backward = lambda g: (
        a._accum(g @ b.data.swapaxes(-1, -2)),
        b._accum(a.data.swapaxes(-1, -2) @ g),
    )
    return out


# -- convolution ----------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(C, H, W) -> (oh*ow, C*kh*kw) patch matrix, valid positions only."""
    c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (C, oh, ow, kh, kw)
    return win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw), oh, ow


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back to the image."""
    c, h, w = shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    g = cols.reshape(oh, ow, c, kh, kw)
    out = np.zeros(shape, dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, u : u + stride * oh : stride, v : v + stride * ow : stride] += (
                g[:, :, :, u, v].transpose(2, 0, 1)
            )
    return out


def conv2d(x: Var, weight: Var, bias: Var, stride: int = 1) -> Var:
    """Valid (unpadded) strided convolution.

    x: (C_in, H, W); weight: (C_out, C_in, kh, kw); bias: (C_out,).
    Returns (C_out, oh, ow).
    """
    co, ci, kh, kw = weight.shape
    cols, oh, ow = _im2col(x.data, kh, kw, stride)
    wmat = weight.data.reshape(co, ci * kh * kw)
    out_data = (cols @ wmat.T).T.reshape(co, oh, ow) + bias.data[:, None, None]
    out = Var(out_data, (x, weight, bias))

    def bw(g):
        gmat = g.reshape(co, oh * ow)  # (co, P)
        weight._accum((gmat @ cols).reshape(weight.shape))
        bias._accum(g.sum(axis=(1, 2)))
        gcols = gmat.T @ wmat  # (P, ci*kh*kw)
        x._accum(_col2im(gcols, x.data.shape, kh, kw, stride))

    out._backward = bw
    return out


def xcorr_depthwise(search: Var, template: Var) -> Var:
    """Per-channel valid cross-correlation of search by template features.

    search: (C, Hs, Ws); template: (C, Ht, Wt) -> (C, Hs-Ht+1, Ws-Wt+1).
    """
    c, ht, wt = template.shape
    win = np.lib.stride_tricks.sliding_window_view(
        search.data, (ht, wt), axis=(1, 2)
    )  # (C, oh, ow, ht, wt)
    out_data = np.einsum("cijuv,cuv->cij", win, template.data, optimize=True)
    out = Var(out_data, (search, template))
    oh, ow = out_data.shape[1:]

    def bw(g):
        template._accum(np.einsum("cijuv,cij->cuv", win, g, optimize=True))
        gs = np.zeros_like(search.data)
        t = template.data
        for i in range(oh):
            for j in range(ow):
                gs[:, i : i + ht, j : j + wt] += g[:, i, j, None, None] * t
        search._accum(gs)

    out._backward = bw
    return out
