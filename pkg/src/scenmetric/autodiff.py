"""Minimal reverse-mode automatic differentiation on numpy float64 arrays.

Just enough machinery for the scenario encoder/decoder: dense algebra,
stride-2 convolution and transposed convolution via patch matrices, the
pointwise nonlinearities, softmax, shape surgery, and an escape hatch for
nodes whose gradients are supplied analytically (the loss stack).

Values are always float64; gradients accumulate in buffers of the same
shape.  Graphs are built eagerly and freed after ``backward``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "tsum",
    "tmean",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "transpose",
    "reshape",
    "tslice",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "custom_scalar",
]


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False, _parents=(), _backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    def detach(self):
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self):
        """Run reverse-mode accumulation from a scalar root."""
        if self.values.size != 1:
            raise ValueError("backward requires a scalar output")
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.values)
        for node in reversed(_topo(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None


def _topo(root):
    """Iterative post-order over the grad-requiring subgraph."""
    order, seen = [], set()
    stack = [(root, iter(root._parents))]
    seen.add(id(root))
    while stack:
        node, children = stack[-1]
        advanced = False
        for child in children:
            if id(child) not in seen and child.requires_grad:
                seen.add(id(child))
                stack.append((child, iter(child._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values + b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.values.shape))

    out._backward = backward
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values - b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.values.shape))

    out._backward = backward
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values * b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    out._backward = backward
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = Tensor(a.values @ b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.values.T)
        if b.requires_grad:
            b._accumulate(a.values.T @ g)

    out._backward = backward
    return out


def tsum(a):
    a = _as_tensor(a)
    out = Tensor(a.values.sum(), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.values, float(g)))

    out._backward = backward
    return out


def tmean(a):
    a = _as_tensor(a)
    out = Tensor(a.values.mean(), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.values, float(g) / a.values.size))

    out._backward = backward
    return out


def relu(a):
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0.0), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.values > 0.0))

    out._backward = backward
    return out


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.values)
    out = Tensor(y, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def sigmoid(a):
    a = _as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.values))
    out = Tensor(y, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    out._backward = backward
    return out


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            a._accumulate(y * (g - dot))

    out._backward = backward
    return out


def transpose(a):
    a = _as_tensor(a)
    if a.values.ndim != 2:
        raise ValueError("transpose expects a 2-D operand")
    out = Tensor(a.values.T.copy(), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    out._backward = backward
    return out


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.values.reshape(shape), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.values.shape))

    out._backward = backward
    return out


def tslice(a, key):
    """Basic-slicing view as a graph node."""
    a = _as_tensor(a)
    out = Tensor(a.values[key], _parents=(a,))

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[key] = g
            a._accumulate(full)

    out._backward = backward
    return out


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(
        np.concatenate([p.values for p in parts], axis=axis),
        _parents=tuple(parts),
    )
    sizes = [p.values.shape[axis] for p in parts]

    def backward(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                p._accumulate(g[tuple(index)])
            offset += size

    out._backward = backward
    return out


# ------------------------------------------------------------ convolution


def _im2col(x, kh, kw, stride):
    """(C, H, W) -> (C*kh*kw, oh*ow) patch matrix."""
    c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C, oh, ow, kh, kw)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, c, h, w, kh, kw, stride, oh, ow):
    """Adjoint of _im2col: scatter-add patches back to (C, H, W)."""
    out = np.zeros((c, h, w))
    blocks = cols.reshape(c, kh, kw, oh, ow)
    for ki in range(kh):
        for kj in range(kw):
            out[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                blocks[:, ki, kj]
            )
    return out


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def _unpad(x, p):
    if p == 0:
        return x
    return x[:, p:-p, p:-p]


def conv2d(x, w, b, stride=2, padding=1):
    """x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    c_out, c_in, kh, kw = w.values.shape
    if x.values.ndim != 3 or x.values.shape[0] != c_in:
        raise ValueError(
            f"shape mismatch: input {x.values.shape} vs kernel {w.values.shape}"
        )
    xp = _pad(x.values, padding)
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    w2 = w.values.reshape(c_out, -1)
    y = (w2 @ cols + b.values[:, None]).reshape(c_out, oh, ow)
    out = Tensor(y, _parents=(x, w, b))

    def backward(g):
        g2 = g.reshape(c_out, -1)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=1))
        if w.requires_grad:
            w._accumulate((g2 @ cols.T).reshape(w.values.shape))
        if x.requires_grad:
            dcols = w2.T @ g2
            dxp = _col2im(
                dcols, xp.shape[0], xp.shape[1], xp.shape[2], kh, kw, stride, oh, ow
            )
            x._accumulate(_unpad(dxp, padding))

    out._backward = backward
    return out


def conv_transpose2d(x, w, b, stride=2, padding=1):
    """x: (C_in, H, W); w: (C_in, C_out, kh, kw); b: (C_out,).

    Output spatial size: (H - 1)*stride + kh - 2*padding.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    c_in, c_out, kh, kw = w.values.shape
    if x.values.ndim != 3 or x.values.shape[0] != c_in:
        raise ValueError(
            f"shape mismatch: input {x.values.shape} vs kernel {w.values.shape}"
        )
    _, h_in, w_in = x.values.shape
    h_full = (h_in - 1) * stride + kh
    w_full = (w_in - 1) * stride + kw
    x2 = x.values.reshape(c_in, -1)
    w2 = w.values.reshape(c_in, -1)
    cols = w2.T @ x2
    y_full = _col2im(cols, c_out, h_full, w_full, kh, kw, stride, h_in, w_in)
    y = _unpad(y_full, padding) + b.values[:, None, None]
    out = Tensor(y, _parents=(x, w, b))

    def backward(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2)))
        g_full = np.zeros((c_out, h_full, w_full))
        if padding:
            g_full[:, padding:-padding, padding:-padding] = g
        else:
            g_full[:] = g
        dcols, _, _ = _im2col(g_full, kh, kw, stride)
        if w.requires_grad:
            w._accumulate((x2 @ dcols.T).reshape(w.values.shape))
        if x.requires_grad:
            x._accumulate((w2 @ dcols).reshape(x.values.shape))

    out._backward = backward
    return out


def custom_scalar(value, inputs, input_grads):
    """A scalar node whose gradients are supplied analytically.

    inputs: graph tensors; input_grads: arrays (or floats) such that
    d(value)/d(inputs[k]) = input_grads[k].
    """
    inputs = tuple(_as_tensor(t) for t in inputs)
    grads = tuple(np.asarray(g, dtype=np.float64) for g in input_grads)
    if len(grads) != len(inputs):
        raise ValueError("one gradient per input required")
    for t, g in zip(inputs, grads):
        if g.shape != t.values.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match input {t.values.shape}"
            )
    out = Tensor(float(value), _parents=inputs)

    def backward(g):
        scale = float(g)
        for t, gi in zip(inputs, grads):
            if t.requires_grad:
                t._accumulate(scale * gi)

    out._backward = backward
    return out
