"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the op that produced it; backward()
walks the graph in reverse topological order accumulating vector-Jacobian
products. Only the ops needed by the denoiser, text encoder and guidance
chains are implemented.

Dtype follows the inputs (float32 graphs for fast training, float64 for
gradient-check precision); everything is plain single-threaded numpy, so
results are bitwise reproducible run to run.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # ---- graph traversal -------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of a scalar (or seeded) output into .grad fields."""
        seed = np.ones_like(self.data) if grad is None else \
            np.asarray(grad, dtype=self.data.dtype)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # ---- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def item(self) -> float:
        return float(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.data.shape),
                             _unbroadcast(g * a.data, b.data.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor(a.data @ b.data, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b) with x (..., k) flattened to one GEMM; w is 2-D (k, m)."""
    x, w = as_tensor(x), as_tensor(w)
    lead = x.data.shape[:-1]
    k = x.data.shape[-1]
    m = w.data.shape[-1]
    x2 = x.data.reshape(-1, k)
    out_data = x2 @ w.data
    if b is None:
        def vjp(g):
            g2 = g.reshape(-1, m)
            return (g2 @ w.data.T).reshape(x.data.shape), x2.T @ g2
        return Tensor(out_data.reshape(lead + (m,)), (x, w), vjp)
    b = as_tensor(b)

    def vjp_b(g):
        g2 = g.reshape(-1, m)
        return (g2 @ w.data.T).reshape(x.data.shape), x2.T @ g2, g2.sum(axis=0)

    return Tensor((out_data + b.data).reshape(lead + (m,)), (x, w, b), vjp_b)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data ** p
    return Tensor(out_data, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    root = np.sqrt(a.data)
    return Tensor(root, (a,), lambda g: (g * 0.5 / root,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return Tensor(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside (lo, hi)."""
    a = as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)
    return Tensor(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def maximum(a, const: float) -> Tensor:
    """Elementwise max against a constant; subgradient 0 at the kink."""
    a = as_tensor(a)
    mask = a.data > const
    return Tensor(np.maximum(a.data, const), (a,), lambda g: (g * mask,))


def minimum(a, const: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data < const
    return Tensor(np.minimum(a.data, const), (a,), lambda g: (g * mask,))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis, keepdims), 1.0 / float(count))


def min_reduce(a, axis) -> Tensor:
    """Min along one axis; gradient routes to the first minimizing element."""
    a = as_tensor(a)
    idx = np.argmin(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return Tensor(out_data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a, idx) -> Tensor:
    """Indexing/slicing; scatter-add on the way back (safe for repeated indices)."""
    a = as_tensor(a)

    def vjp(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return Tensor(a.data[idx], (a,), vjp)


def embedding(table, ids) -> Tensor:
    """Row lookup table[ids] with a one-hot GEMM backward (fast scatter-add)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=int)
    v = table.data.shape[0]

    def vjp(g):
        flat = ids.reshape(-1)
        g2 = g.reshape(-1, table.data.shape[1])
        onehot = np.zeros((flat.size, v), dtype=g2.dtype)
        onehot[np.arange(flat.size), flat] = 1.0
        return (onehot.T @ g2,)

    return Tensor(table.data[ids], (table,), vjp)


def repeat_middle(x, times: int) -> Tensor:
    """Repeat (..., N, d) rows to (..., N*times, d); backward sums the copies."""
    x = as_tensor(x)
    lead = x.data.shape[:-2]
    n, d = x.data.shape[-2:]

    def vjp(g):
        return (g.reshape(lead + (n, times, d)).sum(axis=-2),)

    return Tensor(np.repeat(x.data, times, axis=-2), (x,), vjp)


def where_const(cond, a, b) -> Tensor:
    """Select between two tensors with a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(np.where(cond, a.data, b.data), (a, b),
                  lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.data.shape),
                             _unbroadcast(np.where(cond, 0.0, g), b.data.shape)))


def attn_bias_add(scores, same_params, same_matrix, key_bias) -> Tensor:
    """scores + same_params[h] * same_matrix + key_bias in one materialization.

    `same_params` is a learned per-head vector; `same_matrix` (S, S) and
    `key_bias` (B, 1, 1, S) are constants. Keeping this fused matters: the
    (B, H, S, S) score tensor dominates memory traffic.
    """
    scores, same_params = as_tensor(scores), as_tensor(same_params)
    h = same_params.data.shape[0]
    out = scores.data + same_params.data.reshape(1, h, 1, 1) * same_matrix + key_bias

    def vjp(g):
        gsame = np.einsum("bhij,ij->h", g, same_matrix)
        return g, gsame.astype(same_params.data.dtype)

    return Tensor(out, (scores, same_params), vjp)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - xhat * (gy * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return Tensor(out, (x, gain, bias), vjp)
