"""Reverse-mode automatic differentiation over numpy arrays."""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import FaultReport, GraphError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x, dtype=None):
    a = np.asarray(x, dtype=dtype)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float64)
    return a


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """An array node in the computation graph.

    Leaves created with ``requires_grad=True`` accumulate ``.grad`` when
    ``backward`` runs on a scalar computed from them. Every op output is
    checked for NaN/Inf and raises ``FaultReport`` naming the op.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- bookkeeping ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    @staticmethod
    def _make(data, parents, backward, op):
        if not np.all(np.isfinite(data)):
            raise FaultReport(op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out._consumed = False
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- backward pass ---------------------------------------------------
    def backward(self, grad=None):
        if self._consumed:
            raise GraphError("graph already consumed by a previous backward()")
        if not self.requires_grad:
            raise GraphError("backward() on a tensor with no recorded computation")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg
            node._parents = ()
            node._backward = None
            node._consumed = True

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = _lift(other, self)
        a, b = self.shape, other.shape
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)), "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-_lift(other, self))

    def __rsub__(self, other):
        return _lift(other, self) + (-self)

    def __mul__(self, other):
        other = _lift(other, self)
        x, y = self.data, other.data
        return Tensor._make(x * y, (self, other),
                            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self)
        x, y = self.data, other.data
        return Tensor._make(x / y, (self, other),
                            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
                            "div")

    def __rtruediv__(self, other):
        return _lift(other, self) / self

    def __pow__(self, k):
        if isinstance(k, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        return Tensor._make(x ** k, (self,), lambda g: (g * k * x ** (k - 1),), "pow")

    def __matmul__(self, other):
        other = _lift(other, self)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeError(f"matmul shapes {x.shape} @ {y.shape}")
        return Tensor._make(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    def __getitem__(self, idx):
        shape, dt = self.shape, self.dtype

        def back(g):
            full = np.zeros(shape, dtype=dt)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), back, "getitem")

    # -- elementwise -----------------------------------------------------
    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        x = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(x)
        return Tensor._make(out, (self,), lambda g: (g / x,), "log")

    def abs(self):
        s = np.sign(self.data)
        return Tensor._make(np.abs(self.data), (self,), lambda g: (g * s,), "abs")

    def relu(self):
        m = self.data > 0
        return Tensor._make(self.data * m, (self,), lambda g: (g * m,), "relu")

    def clamp_min(self, floor):
        """``max(x, floor)``; the gradient is zero where the floor is active."""
        m = self.data > floor
        return Tensor._make(np.where(m, self.data, floor).astype(self.dtype), (self,),
                            lambda g: (g * m,), "clamp_min")

    # -- reductions / shape ------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), back, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError as e:
            raise ShapeError(str(e)) from e
        return Tensor._make(out, (self,), lambda g: (g.reshape(old),), "reshape")

    @property
    def T(self):
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,), "transpose")


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Valid (unpadded), stride-1 2-D cross-correlation, channels-last.

    x: (B, H, W, C); w: (F, C, kh, kw); b: (F,) -> (B, H-kh+1, W-kw+1, F)
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} vs kernel {w.shape}")
    B, H, W, C = x.shape
    F, _, kh, kw = w.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {H}x{W}")
    win = sliding_window_view(x.data, (kh, kw), axis=(1, 2))  # B,Ho,Wo,C,kh,kw
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(F, -1)  # F, (kh kw C)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, F)

    def back(g):
        gcols = g.reshape(B * Ho * Wo, F)
        gw = (cols.T @ gcols).T.reshape(F, kh, kw, C).transpose(0, 3, 1, 2)
        gb = gcols.sum(0) if b is not None else None
        gx = None
        if x.requires_grad:
            wk = wmat.reshape(F, kh, kw, C)
            gx = np.zeros_like(x.data)
            for i in range(kh):
                for j in range(kw):
                    gx[:, i:i + Ho, j:j + Wo, :] += (gcols @ wk[:, i, j, :]).reshape(B, Ho, Wo, C)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return Tensor._make(out, parents, back, "conv2d")


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return Tensor._make(out, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax(x: Tensor, axis=-1) -> Tensor:
    return log_softmax(x, axis).exp()
