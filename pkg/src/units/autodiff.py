"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the encoders, decoders and losses actually need.  Every
op records a closure that maps the output gradient to per-parent gradient
contributions; ``backward`` walks the tape once in reverse topological
order.  Correctness is policed by the central-difference oracle in
``units.nn`` (see the gradient test suite).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ParameterError


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    # -- graph construction helpers -------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    @staticmethod
    def _make(data, parents, backward):
        req = any(p.requires_grad for p in parents)
        if not req:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other
        return Tensor._make(
            a.data + b.data,
            (a, b),
            lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))),
        )

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: ((a, -g),))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (
                (a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data,
            (a, b),
            lambda g: (
                (a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
            ),
        )

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ParameterError("only scalar exponents are supported")
        a = self
        return Tensor._make(
            a.data**p, (a,), lambda g: ((a, g * p * a.data ** (p - 1)),)
        )

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ParameterError("matmul is 2-D only; reshape first")
        return Tensor._make(
            a.data @ b.data,
            (a, b),
            lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)),
        )

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        a = self
        old = a.shape
        return Tensor._make(
            a.data.reshape(*shape), (a,), lambda g: ((a, g.reshape(old)),)
        )

    def transpose(self, *axes):
        a = self
        inv = np.argsort(axes)
        return Tensor._make(
            a.data.transpose(axes), (a,), lambda g: ((a, g.transpose(inv)),)
        )

    def __getitem__(self, idx):
        a = self

        def bw(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return ((a, ga),)

        return Tensor._make(a.data[idx], (a,), bw)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is None:
                return ((a, np.broadcast_to(g, a.shape).copy()),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return ((a, np.broadcast_to(gg, a.shape).copy()),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis, keepdims=False):
        a = self
        idx = np.argmax(a.data, axis=axis)
        idx_exp = np.expand_dims(idx, axis)
        out = np.take_along_axis(a.data, idx_exp, axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)

        def bw(g):
            ga = np.zeros_like(a.data)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(ga, idx_exp, gg, axis=axis)
            return ((a, ga),)

        return Tensor._make(out, (a,), bw)

    # -- elementwise nonlinearities -----------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._make(out_data, (a,), lambda g: ((a, g * out_data),))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return Tensor._make(out_data, (a,), lambda g: ((a, g * 0.5 / out_data),))

    def safe_sqrt(self, eps=1e-12):
        """sqrt with a zero subgradient below eps (for hinge-free L2 norms)."""
        a = self
        out_data = np.sqrt(a.data)

        def bw(g):
            ga = np.where(a.data > eps, g * 0.5 / np.maximum(out_data, eps), 0.0)
            return ((a, ga),)

        return Tensor._make(out_data, (a,), bw)

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._make(a.data * mask, (a,), lambda g: ((a, g * mask),))

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)
        return Tensor._make(
            out_data, (a,), lambda g: ((a, g * (1.0 - out_data * out_data)),)
        )

    def sigmoid(self):
        a = self
        out_data = _sigmoid(a.data)
        return Tensor._make(
            out_data, (a,), lambda g: ((a, g * out_data * (1.0 - out_data)),)
        )

    def softplus(self):
        a = self
        out_data = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
        return Tensor._make(out_data, (a,), lambda g: ((a, g * _sigmoid(a.data)),))

    def abs(self):
        a = self
        return Tensor._make(np.abs(a.data), (a,), lambda g: ((a, g * np.sign(a.data)),))

    # -- backward engine --------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ParameterError("backward() requires a scalar loss")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, contrib in node._backward(node.grad):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat(tensors, axis=0):
    tensors = [Tensor._lift(t) for t in tensors]
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append((t, g[tuple(sl)]))
        return tuple(out)

    return Tensor._make(data, tuple(tensors), bw)


def conv1d_causal(x, w, b, dilation=1):
    """Dilated causal conv over channels-last sequences, kernel-backed.

    x: (B, T, Cin) tensor, w: (k, Cin, Cout), b: (Cout,).
    """
    x, w, b = Tensor._lift(x), Tensor._lift(w), Tensor._lift(b)
    out = kernels.conv1d_forward(x.data, w.data, b.data, dilation)

    def bw(g):
        gx, gw, gb = kernels.conv1d_backward(x.data, w.data, g, dilation)
        return ((x, gx), (w, gw), (b, gb))

    return Tensor._make(out, (x, w, b), bw)


def logsumexp(t, axis):
    """Shift-stabilized logsumexp; the detached shift keeps gradients exact."""
    shift = Tensor(np.max(t.data, axis=axis, keepdims=True))
    lse = (t - shift).exp().sum(axis=axis, keepdims=True).log() + shift
    return lse


def log_softmax(t, axis):
    return t - logsumexp(t, axis=axis)


def l2_normalize(t, axis=-1, eps=1e-12):
    sq = (t * t).sum(axis=axis, keepdims=True)
    return t / (sq + eps).sqrt()
