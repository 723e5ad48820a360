"""Minimal dense-tensor reverse-mode autodiff on float64 numpy arrays.

Just enough ops for a small encoder-decoder transformer and an MSE-style
loss: batched matmul (with 2-D weight broadcast), elementwise arithmetic,
softmax, layer norm, relu, max-over-axis with argmax-routed gradients,
L2 normalization, and scaled dot-product attention built from the
primitives.  No general broadcasting: the only implicit broadcast is a
rank-1 bias added on the last axis.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError

# Forward-op NaN/Inf guard; costs a pass over every result.
CHECK_FINITE = os.environ.get("DETAILFUSE_CHECK_FINITE", "") not in ("", "0")


def _finite(op: str, data: np.ndarray) -> np.ndarray:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


class Tensor:
    """A float64 array node in an implicit backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.requires_grad = requires_grad
        self._backward = lambda: None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse pass from a scalar; fills .grad on every reachable node."""
        if self.data.size != 1:
            raise ShapeError("backward", self.shape)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS; graphs can exceed the recursion limit
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()


def _node(data: np.ndarray, prev: tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor(_finite(op, data))
    out._prev = prev
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a rank-1 bias on the last axis of a."""
    bias = b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]
    if a.shape != b.shape and not bias:
        raise ShapeError("add", a.shape, b.shape)
    out = _node(a.data + b.data, (a, b), "add")

    def _bw():
        a.grad += out.grad
        if bias:
            b.grad += out.grad.reshape(-1, b.shape[0]).sum(axis=0)
        else:
            b.grad += out.grad

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    out = _node(a.data - b.data, (a, b), "sub")

    def _bw():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; also accepts a rank-1 gain on the last axis of a."""
    gain = b.ndim == 1 and a.ndim > 1 and a.shape[-1] == b.shape[0]
    if a.shape != b.shape and not gain:
        raise ShapeError("mul", a.shape, b.shape)
    out = _node(a.data * b.data, (a, b), "mul")

    def _bw():
        a.grad += b.data * out.grad
        g = a.data * out.grad
        if gain:
            b.grad += g.reshape(-1, b.shape[0]).sum(axis=0)
        else:
            b.grad += g

    out._backward = _bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _node(a.data * c, (a,), "scale")

    def _bw():
        a.grad += c * out.grad

    out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Either both operands share identical leading (batch) dims, or b is a
    2-D weight applied to every leading slice of a.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    weight = b.ndim == 2 and a.ndim > 2
    if a.shape[-1] != b.shape[-2] or (not weight and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError("matmul", a.shape, b.shape)
    out = _node(a.data @ b.data, (a, b), "matmul")

    def _bw():
        a.grad += out.grad @ np.swapaxes(b.data, -1, -2)
        if weight:
            b.grad += a.data.reshape(-1, a.shape[-1]).T @ out.grad.reshape(-1, out.shape[-1])
        else:
            b.grad += np.swapaxes(a.data, -1, -2) @ out.grad

    out._backward = _bw
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inv = np.argsort(axes)
    out = _node(a.data.transpose(axes), (a,), "transpose")

    def _bw():
        a.grad += out.grad.transpose(inv)

    out._backward = _bw
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    out = _node(data, (a,), "reshape")

    def _bw():
        a.grad += out.grad.reshape(a.shape)

    out._backward = _bw
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat", ())
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw():
        for t, g in zip(tensors, np.split(out.grad, splits, axis=axis)):
            t.grad += g

    out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _node(np.maximum(a.data, 0.0), (a,), "relu")

    def _bw():
        a.grad += (a.data > 0) * out.grad

    out._backward = _bw
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (a,), "softmax")

    def _bw():
        g = out.grad
        a.grad += y * (g - (g * y).sum(axis=axis, keepdims=True))

    out._backward = _bw
    return out


def layer_norm(a: Tensor, eps: float, axis: int = -1) -> Tensor:
    """Zero-mean unit-variance normalization (no learned gain/bias)."""
    if eps <= 0:
        raise ShapeError("layer_norm", a.shape, (eps,))
    mu = a.data.mean(axis=axis, keepdims=True)
    var = a.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = _node(y, (a,), "layer_norm")

    def _bw():
        g = out.grad
        gm = g.mean(axis=axis, keepdims=True)
        gym = (g * y).mean(axis=axis, keepdims=True)
        a.grad += inv * (g - gm - y * gym)

    out._backward = _bw
    return out


def max_along(a: Tensor, axis: int = -1) -> Tensor:
    """Max over one axis; gradient flows only to the first (lowest-index) argmax."""
    idx = a.data.argmax(axis=axis)
    out = _node(np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis), (a,), "max")

    def _bw():
        g = np.zeros_like(a.data)
        np.put_along_axis(g, np.expand_dims(idx, axis), np.expand_dims(out.grad, axis), axis)
        a.grad += g

    out._backward = _bw
    return out


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.linalg.norm(a.data, axis=axis, keepdims=True)
    denom = norm + eps
    y = a.data / denom
    out = _node(y, (a,), "l2_normalize")

    def _bw():
        g = out.grad
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        safe = np.maximum(norm, eps)
        a.grad += g / denom - a.data * dot / (safe * denom * denom)

    out._backward = _bw
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _node(np.asarray(a.data.sum()), (a,), "sum")

    def _bw():
        a.grad += out.grad

    out._backward = _bw
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error between same-shaped tensors; scalar output."""
    if a.shape != b.shape:
        raise ShapeError("mse", a.shape, b.shape)
    diff = a.data - b.data
    out = _node(np.asarray(np.mean(diff * diff)), (a, b), "mse")
    n = diff.size

    def _bw():
        g = (2.0 / n) * diff * out.grad
        a.grad += g
        b.grad -= g

    out._backward = _bw
    return out


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_h)) V over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ShapeError("scaled_dot_attention", q.shape, k.shape, v.shape)
    d_h = q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = scale(matmul(q, kt), 1.0 / np.sqrt(d_h))
    return matmul(softmax(scores, axis=-1), v)
