"""Dense float64 tensors with reverse-mode automatic differentiation.

A small dynamic-graph engine: every operation returns a new Tensor that
remembers its parents and how to push gradients back to them. Calling
`backward()` on a scalar walks the graph once in reverse topological order.
The op set is exactly what the classifiers here need - dense affine stacks,
small stride-1 convolutions, the two unit-normalizations used by cosine
matching, softmax / cross-entropy, and squared-norm penalties.

Everything is float64 and single-threaded by contract; identical inputs and
weights always produce bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ._kernels import (
    conv2d_backward,
    conv2d_forward,
    maxpool2d_backward,
    maxpool2d_forward,
)


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray promotes 0-d to 1-d, so scalars bypass it
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: float = 1.0) -> None:
        """Accumulate gradients of this scalar into every reachable parameter.

        Each graph node is visited exactly once, in reverse topological
        order. `seed` scales the output gradient (d out/d out), which lets
        callers differentiate monotone transforms of the value - e.g. a log
        - without adding graph ops.
        """
        if self.size != 1:
            raise ShapeError(
                f"backward: loss must be scalar, got shape {self.shape} from op '{self.op}'"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.full_like(self.data, seed)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: np.ndarray, parents: Iterable[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in out._parents)
    out.op = op
    if out.requires_grad:
        out._backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def bw(gy):
        _accumulate(a, gy)
        _accumulate(b, gy)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")

    def bw(gy):
        _accumulate(a, gy)
        _accumulate(b, -gy)

    return _node(a.data - b.data, (a, b), bw, "sub")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def bw(gy):
        _accumulate(a, gy * factor)

    return _node(a.data * factor, (a,), bw, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(gy):
        _accumulate(a, gy @ b.data.T)
        _accumulate(b, a.data.T @ gy)

    return _node(a.data @ b.data, (a, b), bw, "matmul")


def bias_add(m: Tensor, v: Tensor) -> Tensor:
    """Broadcast a length-n vector across the columns of an n x q matrix."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[0] != v.shape[0]:
        raise ShapeError(f"bias_add: matrix {m.shape} incompatible with bias {v.shape}")

    def bw(gy):
        _accumulate(m, gy)
        _accumulate(v, gy.sum(axis=1))

    return _node(m.data + v.data[:, None], (m, v), bw, "bias_add")


def channel_bias_add(x: Tensor, v: Tensor) -> Tensor:
    """Broadcast a per-channel bias across an (N, C, H, W) activation."""
    if x.ndim != 4 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(f"channel_bias_add: input {x.shape} incompatible with bias {v.shape}")

    def bw(gy):
        _accumulate(x, gy)
        _accumulate(v, gy.sum(axis=(0, 2, 3)))

    return _node(x.data + v.data[None, :, None, None], (x, v), bw, "channel_bias_add")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(gy):
        _accumulate(x, gy * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def take_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice rows [start, stop) of a matrix; gradient is zero-padded back."""
    if x.ndim != 2 or not (0 <= start < stop <= x.shape[0]):
        raise ShapeError(f"take_rows: invalid range [{start}, {stop}) for shape {x.shape}")

    def bw(gy):
        g = np.zeros_like(x.data)
        g[start:stop] = gy
        _accumulate(x, g)

    return _node(x.data[start:stop].copy(), (x,), bw, "take_rows")


def take_block(x: Tensor, rows: int, cols: int) -> Tensor:
    """The leading rows x cols block of a matrix; gradient is zero-padded back."""
    if x.ndim != 2 or not (0 < rows <= x.shape[0]) or not (0 < cols <= x.shape[1]):
        raise ShapeError(f"take_block: invalid block {rows}x{cols} for shape {x.shape}")

    def bw(gy):
        g = np.zeros_like(x.data)
        g[:rows, :cols] = gy
        _accumulate(x, g)

    return _node(x.data[:rows, :cols].copy(), (x,), bw, "take_block")


# ---------------------------------------------------------------------------
# structural ops


def flatten(x: Tensor) -> Tensor:
    """(N, ...) batch of samples -> (features, N) column-per-sample matrix."""
    if x.ndim < 2:
        raise ShapeError(f"flatten: need at least 2 dims, got {x.shape}")
    n = x.shape[0]
    orig = x.shape

    def bw(gy):
        _accumulate(x, np.ascontiguousarray(gy.T).reshape(orig))

    return _node(np.ascontiguousarray(x.data.reshape(n, -1).T), (x,), bw, "flatten")


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Stride-1 valid convolution: (N,Cin,H,W) * (Cout,Cin,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if w.shape[2] > x.shape[2] or w.shape[3] > x.shape[3]:
        raise ShapeError(f"conv2d: kernel {w.shape} larger than input {x.shape}")

    def bw(gy):
        gx, gw = conv2d_backward(x.data, w.data, np.ascontiguousarray(gy))
        _accumulate(x, gx)
        _accumulate(w, gw)

    return _node(conv2d_forward(x.data, w.data), (x, w), bw, "conv2d")


def maxpool2d(x: Tensor, k: int) -> Tensor:
    if x.ndim != 4 or k < 1 or x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"maxpool2d: window {k} invalid for input {x.shape}")
    y, idx = maxpool2d_forward(x.data, k)
    shape = x.shape

    def bw(gy):
        _accumulate(x, maxpool2d_backward(np.ascontiguousarray(gy), idx, shape))

    return _node(y, (x,), bw, "maxpool2d")


# ---------------------------------------------------------------------------
# normalizations


def unit_rows(m: Tensor) -> Tensor:
    """Scale every row of a matrix to unit L2 norm."""
    if m.ndim != 2:
        raise ShapeError(f"unit_rows: need a matrix, got {m.shape}")
    norms = np.sqrt((m.data * m.data).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"unit_rows: row {int(zero[0])} has zero norm")
    u = m.data / norms[:, None]

    def bw(gy):
        # d(m/|m|) projects the incoming gradient off the row direction
        dots = (gy * u).sum(axis=1, keepdims=True)
        _accumulate(m, (gy - dots * u) / norms[:, None])

    return _node(u, (m,), bw, "unit_rows")


def unit_cols(m: Tensor) -> Tensor:
    """Scale every column of a matrix to unit L2 norm."""
    if m.ndim != 2:
        raise ShapeError(f"unit_cols: need a matrix, got {m.shape}")
    norms = np.sqrt((m.data * m.data).sum(axis=0))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"unit_cols: column {int(zero[0])} has zero norm")
    u = m.data / norms[None, :]

    def bw(gy):
        dots = (gy * u).sum(axis=0, keepdims=True)
        _accumulate(m, (gy - dots * u) / norms[None, :])

    return _node(u, (m,), bw, "unit_cols")


# ---------------------------------------------------------------------------
# classification losses


def softmax(z: Tensor) -> Tensor:
    """Column-wise softmax of a (classes, batch) score matrix."""
    if z.ndim != 2:
        raise ShapeError(f"softmax: need a matrix, got {z.shape}")
    shifted = z.data - z.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=0, keepdims=True)

    def bw(gy):
        _accumulate(z, p * (gy - (gy * p).sum(axis=0, keepdims=True)))

    return _node(p, (z,), bw, "softmax")


def cross_entropy(p: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class, given probabilities."""
    labels = np.asarray(labels)
    if p.ndim != 2 or labels.ndim != 1 or labels.shape[0] != p.shape[1]:
        raise ShapeError(f"cross_entropy: probs {p.shape} incompatible with labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= p.shape[0]:
        raise ValueError("cross_entropy: label outside class range")
    q = p.shape[1]
    cols = np.arange(q)
    picked = p.data[labels, cols]
    if np.any(picked <= 0.0):
        raise ValueError("cross_entropy: zero probability at a true class")

    def bw(gy):
        g = np.zeros_like(p.data)
        g[labels, cols] = -float(gy) / (q * picked)
        _accumulate(p, g)

    return _node(-np.log(picked).mean(), (p,), bw, "cross_entropy")


def sum_sq(x: Tensor) -> Tensor:
    """Squared L2 norm: sum of all squared entries."""

    def bw(gy):
        _accumulate(x, 2.0 * float(gy) * x.data)

    return _node(np.float64((x.data * x.data).sum()), (x,), bw, "sum_sq")


def weighted_sum_sq(x: Tensor, weights: np.ndarray) -> Tensor:
    """Sum of w_i * x_i**2 for a fixed non-negative weight array."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ShapeError(f"weighted_sum_sq: weights {weights.shape} != input {x.shape}")

    def bw(gy):
        _accumulate(x, 2.0 * float(gy) * weights * x.data)

    return _node(np.float64((weights * x.data * x.data).sum()), (x,), bw, "weighted_sum_sq")
