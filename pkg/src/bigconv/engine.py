"""Minimal dense-tensor autodiff engine.

Every differentiable operation records the values its backward pass needs in
a closure on the output tensor, so a single reverse sweep yields
vector-Jacobian products for all inputs.  Arrays are float64 by default
(float32 selectable per tensor); values are treated as immutable once an op
has consumed them.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """Operand values outside an operation's domain."""


class Tensor:
    """A dense array plus the backward closure of the op that produced it."""

    __slots__ = ("data", "grad", "op", "_parents", "_vjp")

    def __init__(self, data, parents=(), op="leaf", vjp=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._vjp = vjp  # callable(cotangent) -> tuple of parent cotangents

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # Operator sugar used throughout the library.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return add(self, scale(_wrap(other, self), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, cotangent=None):
        """Reverse sweep from this tensor; fills .grad on every reachable node."""
        if cotangent is None:
            cotangent = np.ones_like(self.data)
        cotangent = np.asarray(cotangent, dtype=self.data.dtype)
        if cotangent.shape != self.data.shape:
            raise ShapeError(
                f"cotangent shape {cotangent.shape} does not match output {self.data.shape}"
            )
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = cotangent
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _topo_order(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def vjp(output: Tensor, cotangent, wrt) -> list:
    """Gradients of <cotangent, output> for each tensor in `wrt`."""
    output.backward(cotangent)
    grads = []
    for t in wrt:
        grads.append(np.zeros_like(t.data) if t.grad is None else t.grad)
    return grads


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary_shapes_ok(a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"operand shapes {a.shape} and {b.shape} do not broadcast")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out_data, (a, b), "add", backward, dtype=out_data.dtype)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; broadcasting covers column-across-channels use."""
    _binary_shapes_ok(a, b)
    out_data = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return Tensor(out_data, (a, b), "hadamard", backward, dtype=out_data.dtype)


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes_ok(a, b)
    out_data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor(out_data, (a, b), "div", backward, dtype=out_data.dtype)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return Tensor(a.data * s, (a,), "scale", backward, dtype=a.data.dtype)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, 0.0), (a,), "relu", backward, dtype=a.data.dtype)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so neither exp overflows
    d = a.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out_data[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return Tensor(out_data, (a,), "sigmoid", backward, dtype=a.data.dtype)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return Tensor(out_data, (a,), "tanh", backward, dtype=a.data.dtype)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt requires non-negative input")
    out_data = np.sqrt(a.data)

    def backward(g):
        return (g * 0.5 / out_data,)

    return Tensor(out_data, (a,), "sqrt", backward, dtype=a.data.dtype)


def recip_sqrt(a: Tensor) -> Tensor:
    """x ** -0.5; input must be strictly positive."""
    if np.any(a.data <= 0):
        raise DomainError("recip_sqrt requires strictly positive input")
    out_data = 1.0 / np.sqrt(a.data)

    def backward(g):
        return (g * (-0.5) * out_data / a.data,)

    return Tensor(out_data, (a,), "recip_sqrt", backward, dtype=a.data.dtype)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) entrywise; gradient passes only where a > floor."""
    mask = a.data > floor

    def backward(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.data, floor), (a,), "clamp_min", backward, dtype=a.data.dtype)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    out_data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out_data, (a, b), "matmul", backward, dtype=out_data.dtype)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def backward(g):
        return (g.T,)

    return Tensor(a.data.T, (a,), "transpose", backward, dtype=a.data.dtype)


def linear_map(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-position linear map x @ w (+ bias row), i.e. a 1x1 convolution."""
    out = matmul(x, w)
    if bias is not None:
        if bias.data.shape != (1, w.shape[1]):
            raise ShapeError(
                f"bias shape {bias.data.shape} does not match output width {w.shape[1]}"
            )
        out = add(out, bias)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = a.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return Tensor(a.data.reshape(shape), (a,), "reshape", backward, dtype=a.data.dtype)


def tsum(a: Tensor, axis=None, keepdims=True) -> Tensor:
    out_data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        g = np.asarray(g)
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out_data, (a,), "sum", backward, dtype=a.data.dtype)


def softmax(a: Tensor, axis=1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return Tensor(out_data, (a,), "softmax", backward, dtype=a.data.dtype)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def pool_over_positions(x: Tensor) -> Tensor:
    """Per-channel max over all positions: (N, C) -> (1, C).

    Backward routes each channel's gradient to the first maximal row.
    """
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"pool_over_positions expects a non-empty matrix, got {x.shape}")
    idx = np.argmax(x.data, axis=0)  # first occurrence on ties
    out_data = x.data[idx, np.arange(x.shape[1])].reshape(1, -1)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx, np.arange(x.shape[1])] = g[0]
        return (gx,)

    return Tensor(out_data, (x,), "pool_over_positions", backward, dtype=x.data.dtype)


def pool_over_channels(x: Tensor) -> Tensor:
    """Per-position max over channels: (N, C) -> (N, 1)."""
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"pool_over_channels expects a non-empty matrix, got {x.shape}")
    idx = np.argmax(x.data, axis=1)
    out_data = x.data[np.arange(x.shape[0]), idx].reshape(-1, 1)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[np.arange(x.shape[0]), idx] = g[:, 0]
        return (gx,)

    return Tensor(out_data, (x,), "pool_over_channels", backward, dtype=x.data.dtype)


def max_pool_2x2(x: Tensor) -> Tensor:
    """2x2 spatial max pool on an (H, W, C) grid; H and W must be even."""
    if x.ndim != 3:
        raise ShapeError(f"max_pool_2x2 expects an (H, W, C) grid, got {x.shape}")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool_2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(
        h // 2, w // 2, c, 4
    )
    idx = np.argmax(blocks, axis=3)  # scan order within each block, first max wins
    out_data = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=3)
        gx = gb.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)
        return (gx,)

    return Tensor(out_data, (x,), "max_pool_2x2", backward, dtype=x.data.dtype)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def _resample_coords(n_out: int, n_in: int, dtype):
    # align_corners=False source coordinates, clamped to the valid range
    src = (np.arange(n_out, dtype=dtype) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resample(x: Tensor, target_hw) -> Tensor:
    """Bilinear resample of an (H, W, C) grid to (H', W'); exact at identity size."""
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resample expects an (H, W, C) grid, got {x.shape}")
    h, w, _ = x.shape
    h2, w2 = int(target_hw[0]), int(target_hw[1])
    if h2 < 1 or w2 < 1:
        raise ShapeError(f"bilinear_resample target must be positive, got {h2}x{w2}")

    y0, y1, fy = _resample_coords(h2, h, x.data.dtype)
    x0, x1, fx = _resample_coords(w2, w, x.data.dtype)
    wy0, wy1 = (1.0 - fy)[:, None, None], fy[:, None, None]
    wx0, wx1 = (1.0 - fx)[None, :, None], fx[None, :, None]

    d = x.data
    out_data = (
        wy0 * (wx0 * d[np.ix_(y0, x0)] + wx1 * d[np.ix_(y0, x1)])
        + wy1 * (wx0 * d[np.ix_(y1, x0)] + wx1 * d[np.ix_(y1, x1)])
    )

    def backward(g):
        gx = np.zeros_like(d)
        for ys, wy in ((y0, wy0), (y1, wy1)):
            for xs, wx in ((x0, wx0), (x1, wx1)):
                np.add.at(gx, np.ix_(ys, xs), g * wy * wx)
        return (gx,)

    return Tensor(out_data, (x,), "bilinear_resample", backward, dtype=x.data.dtype)


# ---------------------------------------------------------------------------
# grid propagation for the input-independent baseline
# ---------------------------------------------------------------------------

def grid_neighbor_sum(x: Tensor, height: int, width: int) -> Tensor:
    """(A + I) @ x for the 4-neighbor grid graph on height x width vertices.

    Symmetric operator, so the backward pass is the same propagation.
    """
    if x.ndim != 2 or x.shape[0] != height * width:
        raise ShapeError(f"grid_neighbor_sum: {x.shape} does not match {height}x{width} grid")

    def propagate(d):
        grid = d.reshape(height, width, -1)
        out = grid.copy()
        out[1:] += grid[:-1]
        out[:-1] += grid[1:]
        out[:, 1:] += grid[:, :-1]
        out[:, :-1] += grid[:, 1:]
        return out.reshape(d.shape)

    def backward(g):
        return (propagate(g),)

    return Tensor(propagate(x.data), (x,), "grid_neighbor_sum", backward, dtype=x.data.dtype)


def grid_degrees(height: int, width: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Row sums of (A + I) for the 4-neighbor grid: 1 + number of neighbors."""
    deg = np.full((height, width), 5.0, dtype=dtype)
    deg[0, :] -= 1.0
    deg[-1, :] -= 1.0
    deg[:, 0] -= 1.0
    deg[:, -1] -= 1.0
    return deg.reshape(-1, 1)


def first_nonfinite(root: Tensor) -> str | None:
    """Op label of the first non-finite tensor in forward order, if any."""
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            return node.op
    return None
