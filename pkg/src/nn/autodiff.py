"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every op records its parents and a closure mapping the output gradient to one
gradient per parent. ``Tensor.backward`` walks the graph once in reverse
topological order, so a node shared by several branches is differentiated once
with its accumulated gradient.
"""

from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A float64 array that can record the operations applied to it."""

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat view of the buffer."""
        return self.data.reshape(-1)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf requiring grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _result(values, parents: Tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad, parents if requires_grad else (), backward if requires_grad else None, op)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    return _result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    return _result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def square(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(x.data ** 2, (x,), lambda g: (2.0 * x.data * g,), "square")


def sqrt(x: ArrayLike) -> Tensor:
    """Square root; the gradient at exactly zero is taken as zero."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _result(out, (x,), backward, "sqrt")


def clamp_min(x: ArrayLike, floor: float) -> Tensor:
    x = as_tensor(x)
    mask = x.data >= floor
    return _result(np.where(mask, x.data, floor), (x,), lambda g: (g * mask,), "clamp_min")


def reduce_sum(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), backward, "reduce_sum")


def reduce_mean(x: ArrayLike, axis: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError(f"reduce_mean over an empty axis of shape {x.shape}")
    return mul(reduce_sum(x, axis), 1.0 / count)


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike, axes: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def gather(x: ArrayLike, indices: np.ndarray) -> Tensor:
    """Rows of ``x`` selected by ``indices`` (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise ShapeError(f"gather: indices out of range for shape {x.shape}")

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return _result(x.data[indices], (x,), backward, "gather")


def segment_max(x: ArrayLike, segment_ids: np.ndarray, n_segments: int) -> Tensor:
    """
    Per-segment channel-wise max of the rows of ``x``; empty segments are zero.

    Gradient flows to the winning row of each (segment, channel), lowest row index on ties.
    """
    x = as_tensor(x)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if x.data.ndim != 2 or segment_ids.shape != (x.shape[0],):
        raise ShapeError(f"segment_max: values {x.shape} vs segment ids {segment_ids.shape}")
    n_rows, n_channels = x.shape
    out = np.full((n_segments, n_channels), -np.inf)
    np.maximum.at(out, segment_ids, x.data)
    occupied = np.zeros(n_segments, dtype=bool)
    occupied[segment_ids] = True
    out[~occupied] = 0.0

    winner = np.full((n_segments, n_channels), n_rows, dtype=np.int64)
    is_max = x.data == out[segment_ids]
    rows = np.broadcast_to(np.arange(n_rows)[:, None], (n_rows, n_channels))
    np.minimum.at(winner, segment_ids, np.where(is_max, rows, n_rows))

    def backward(g):
        grad = np.zeros_like(x.data)
        seg, chan = np.nonzero(occupied[:, None] & (winner < n_rows))
        grad[winner[seg, chan], chan] += g[seg, chan]
        return (grad,)

    return _result(out, (x,), backward, "segment_max")


def conv2d(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation of one ``(C, H, W)`` image with ``(O, C, k, k)`` filters.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d supports stride 1 or 2, got {stride}")
    k = weight.shape[2]
    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    out_h, out_w = windows.shape[1], windows.shape[2]
    out = np.einsum("chwij,ocij->ohw", windows, weight.data, optimize=True)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        parents = (x, weight, bias)

    def backward(g):
        grad_w = np.einsum("ohw,chwij->ocij", g, windows, optimize=True)
        grad_windows = np.einsum("ohw,ocij->chwij", g, weight.data, optimize=True)
        grad_padded = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                grad_padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_windows[:, :, :, i, j]
        h, w = x.shape[1], x.shape[2]
        grad_x = grad_padded[:, padding:padding + h, padding:padding + w]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    return _result(out, parents, backward, "conv2d")


def conv_transpose2d(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """
    Transposed convolution with kernel size equal to stride: ``(C, H, W)`` with
    ``(C, O, s, s)`` filters gives ``(O, s*H, s*W)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4 or weight.shape[0] != x.shape[0] or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} incompatible with weight {weight.shape}")
    _, h, w = x.shape
    out_channels, s = weight.shape[1], weight.shape[2]
    blocks = np.einsum("chw,coij->ohiwj", x.data, weight.data, optimize=True)
    out = blocks.reshape(out_channels, h * s, w * s)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        parents = (x, weight, bias)

    def backward(g):
        g_blocks = g.reshape(out_channels, h, s, w, s)
        grads = [
            np.einsum("ohiwj,coij->chw", g_blocks, weight.data, optimize=True),
            np.einsum("ohiwj,chw->coij", g_blocks, x.data, optimize=True),
        ]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    return _result(out, parents, backward, "conv_transpose2d")
