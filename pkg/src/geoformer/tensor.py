"""Minimal N-dimensional tensor with reverse-mode automatic differentiation.

All values are float64 numpy arrays in row-major order. Every op checks its
operand shapes explicitly; the only implicit broadcasting allowed is between a
tensor and a scalar. Ops that need a larger shape from a smaller one go
through :func:`expand`, which has an auditable gradient rule.

A graph node is only recorded when at least one input requires a gradient, so
inference on plain tensors allocates no graph.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, DomainError

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Array value plus optional gradient and the rule that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

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
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return _wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _wrap(data: np.ndarray) -> Tensor:
    """Build a leaf without the copy and finiteness scan of ``Tensor()``."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    t.op = "leaf"
    t._parents = ()
    t._backward = None
    return t


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = _wrap(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer)) or (
        isinstance(x, Tensor) and x.ndim == 0
    )


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} incompatible with {b.shape}")


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, Tensor) and a.ndim == 0 and b.ndim != 0:
        a, b = b, a
    if _is_scalar(b) and not (isinstance(b, Tensor) and a.ndim == 0):
        if isinstance(b, Tensor):
            return _node(a.data + b.data, (a, b), lambda g: (g, np.sum(g)), "add")
        return _node(a.data + float(b), (a,), lambda g: (g,), "add")
    b = as_tensor(b)
    _check_same(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)) if isinstance(b, Tensor) else -float(b))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if _is_scalar(b) and not isinstance(b, Tensor):
        return scale(a, float(b))
    b = as_tensor(b)
    if b.ndim == 0 and a.ndim != 0:
        ad, bd = a.data, b.data
        return _node(ad * bd, (a, b), lambda g: (g * bd, np.sum(g * ad)), "mul")
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,), "scale")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def ln(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0.0):
        raise DomainError("ln: argument must be strictly positive")
    return _node(np.log(x), (a,), lambda g: (g / x,), "ln")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node(x * cdf, (a,), back, "gelu")


# --------------------------------------------------------------------------
# reductions and shape ops


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out), (a,), back, "sum")


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def expand(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``a`` (size-1 or missing leading axes) to ``shape``."""
    shape = tuple(shape)
    src = a.shape
    lead = len(shape) - len(src)
    if lead < 0 or any(s not in (1, t) for s, t in zip(src, shape[lead:])):
        raise DimensionError(f"expand: cannot expand {src} to {shape}")
    bcast = tuple(range(lead)) + tuple(
        lead + i for i, (s, t) in enumerate(zip(src, shape[lead:])) if s == 1 and t != 1
    )

    def back(g):
        g = np.sum(g, axis=bcast, keepdims=True) if bcast else g
        return (g.reshape(src),)

    return _node(np.broadcast_to(a.data, shape).copy(), (a,), back, "expand")


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along the second-to-last axis; ``index`` has shape ``(..., u)``."""
    index = np.asarray(index, dtype=np.intp)
    if index.shape[:-1] != a.shape[:-2]:
        raise DimensionError(f"gather_rows: index {index.shape} does not match {a.shape}")
    idx = index[..., None]
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.put_along_axis(full, np.broadcast_to(idx, g.shape), g, axis=-2)
        return (full,)

    out = np.take_along_axis(a.data, np.broadcast_to(idx, index.shape + shape[-1:]), axis=-2)
    return _node(out, (a,), back, "gather_rows")


def scatter_rows(base: Tensor, rows: Tensor, index: np.ndarray) -> Tensor:
    """Copy of ``base`` with ``rows`` written at row positions ``index`` (no duplicates)."""
    index = np.asarray(index, dtype=np.intp)
    if rows.shape != index.shape + base.shape[-1:] or index.shape[:-1] != base.shape[:-2]:
        raise DimensionError(
            f"scatter_rows: rows {rows.shape} / index {index.shape} vs base {base.shape}"
        )
    idx = np.broadcast_to(index[..., None], rows.shape)
    out = base.data.copy()
    np.put_along_axis(out, idx, rows.data, axis=-2)

    def back(g):
        g_base = g.copy()
        np.put_along_axis(g_base, idx, 0.0, axis=-2)
        return g_base, np.take_along_axis(g, idx, axis=-2)

    return _node(out, (base, rows), back, "scatter_rows")


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``c[..., i, j] = sum_p a[..., i, p] * b[..., p, j]`` with identical leading dims."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shape {a.shape} incompatible with {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _node(ad @ bd, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x[..., d_in] @ W[d_in, d_out] + b[d_out]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != weight.shape[1:]:
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out = out + bias.data

    def back(g):
        x2 = xd.reshape(-1, xd.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads = [g @ wd.T, x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, back, "linear")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=-1, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _node(s, (x,), back, "softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise DomainError("layernorm: eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm: params {gamma.shape}/{beta.shape} for width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        g2 = g.reshape(-1, d)
        return dx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return _node(xhat * gd + beta.data, (x, gamma, beta), back, "layernorm")


# --------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are rebuilt.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any requires_grad tensor")
    order = _topological(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None or node._parents else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# --------------------------------------------------------------------------
# finite-difference oracle


def default_step(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.finfo(np.float64).eps) * np.maximum(1.0, np.abs(x))


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x, h=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    steps = default_step(base) if h is None else np.broadcast_to(np.asarray(h, float), base.shape)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        hi = steps.flat[i]
        orig = flat[i]
        flat[i] = orig + hi
        fp = _scalar(f(_wrap(base.copy())))
        flat[i] = orig - hi
        fm = _scalar(f(_wrap(base.copy())))
        flat[i] = orig
        grad.flat[i] = (fp - fm) / (2.0 * hi)
    return grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        if v.ndim != 0:
            raise ContractError(f"finite_diff_grad: f must be scalar-valued, got {v.shape}")
        return float(v.data)
    return float(v)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
