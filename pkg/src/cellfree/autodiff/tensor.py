"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation returns a :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
import math
import string

import numpy as np

LOG_FLOOR = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the reflected Tensor method

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, False, (), None, op)


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
    requires gradients. ``root`` must hold a single value."""
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    grads = {id(root): np.ones_like(root.data) if grad is None else np.asarray(grad, float)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# elementwise binary ---------------------------------------------------------

def _grad_if(t: Tensor, fn):
    return fn() if t.requires_grad else None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_grad_if(a, lambda: unbroadcast(g, a.shape)),
                            _grad_if(b, lambda: unbroadcast(g, b.shape))), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_grad_if(a, lambda: unbroadcast(g, a.shape)),
                            _grad_if(b, lambda: unbroadcast(-g, b.shape))), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_grad_if(a, lambda: unbroadcast(g * b.data, a.shape)),
                            _grad_if(b, lambda: unbroadcast(g * a.data, b.shape))), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return (unbroadcast(ga, a.shape) if a.requires_grad else None,
                unbroadcast(-ga * out, b.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw, "div")


def power(a, exponent: float):
    a = as_tensor(a)
    out = a.data ** exponent
    return _make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def maximum(a, floor: float):
    """``max(a, floor)`` against a constant; the gradient passes where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


def clamp(a, lo=-np.inf, hi=np.inf):
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


# elementwise unary ------------------------------------------------------------

def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    """Natural log with inputs clamped to ``[1e-12, inf)``."""
    a = as_tensor(a)
    x = np.maximum(a.data, LOG_FLOOR)
    mask = a.data >= LOG_FLOOR
    return _make(np.log(x), (a,), lambda g: (g * mask / x,), "log")


def log2(a):
    """Base-2 log with the same input clamp as :func:`log`."""
    a = as_tensor(a)
    x = np.maximum(a.data, LOG_FLOOR)
    mask = a.data >= LOG_FLOOR
    inv_ln2 = 1.0 / math.log(2.0)
    return _make(np.log2(x), (a,), lambda g: (g * mask * inv_ln2 / x,), "log2")


def sqrt(a):
    """Square root; the gradient at exactly zero is taken as zero."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make(out, (a,), bw, "sqrt")


def abs2(re, im):
    """Squared magnitude of a complex value stored as (re, im)."""
    re, im = as_tensor(re), as_tensor(im)
    return _make(re.data ** 2 + im.data ** 2, (re, im),
                 lambda g: (unbroadcast(2.0 * g * re.data, re.shape),
                            unbroadcast(2.0 * g * im.data, im.shape)), "abs2")


# reductions and shape ---------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def prod(a, axis: int, keepdims=False):
    """Product along one axis; the gradient uses exclusive prefix/suffix
    products so zero factors are handled exactly."""
    a = as_tensor(a)
    axis = axis % a.ndim
    x = np.moveaxis(a.data, axis, -1)
    ones = np.ones(x.shape[:-1] + (1,))
    prefix = np.concatenate([ones, np.cumprod(x, axis=-1)[..., :-1]], axis=-1)
    suffix = np.concatenate([np.cumprod(x[..., ::-1], axis=-1)[..., :-1][..., ::-1], ones], axis=-1)
    others = np.moveaxis(prefix * suffix, -1, axis)
    out = np.prod(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * others,)

    return _make(out, (a,), bw, "prod")


def mean_pool(a, axis, mask=None, keepdims=False):
    """Mean over ``axis`` restricted to entries where ``mask`` is 1.

    Empty index sets pool to zero.
    """
    a = as_tensor(a)
    if mask is None:
        return mean(a, axis, keepdims)
    mask = np.broadcast_to(np.asarray(mask, float), a.shape)
    count = mask.sum(axis=axis, keepdims=keepdims)
    inv = np.divide(1.0, count, out=np.zeros_like(count), where=count > 0)
    return mul(tsum(mul(a, mask), axis, keepdims), inv)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, bw, "stack")


# linear algebra -----------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def _parse_einsum(spec: str, n: int):
    if "->" not in spec or "." in spec:
        raise ValueError("einsum spec must be explicit, e.g. 'ij,jk->ik'")
    lhs, out = spec.replace(" ", "").split("->")
    ins = lhs.split(",")
    if len(ins) != n:
        raise ValueError(f"einsum spec has {len(ins)} operands, got {n}")
    for sub in ins + [out]:
        if len(set(sub)) != len(sub):
            raise ValueError("repeated indices within one operand are not supported")
    return ins, out


def einsum(spec: str, *operands):
    """Differentiable ``np.einsum`` with an explicit output."""
    ops = [as_tensor(o) for o in operands]
    ins, out = _parse_einsum(spec, len(ops))
    result = np.einsum(spec, *[o.data for o in ops])
    sizes = {}
    for sub, o in zip(ins, ops):
        if len(sub) != o.ndim:
            raise ValueError(f"einsum operand '{sub}' does not match shape {o.shape}")
        for c, s in zip(sub, o.shape):
            if sizes.setdefault(c, s) != s:
                raise ValueError(f"einsum size mismatch on index '{c}'")

    def bw(g):
        grads = []
        for j, (sub, o) in enumerate(zip(ins, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [(s, ops[i].data) for i, s in enumerate(ins) if i != j]
            avail = set(out).union(*[set(s) for s, _ in others]) if others else set(out)
            kept = "".join(c for c in sub if c in avail)
            expr = ",".join([out] + [s for s, _ in others]) + "->" + kept
            gj = np.einsum(expr, g, *[d for _, d in others])
            if kept != sub:
                # indices summed only inside this operand: gradient is constant along them
                shape = [sizes[c] if c in kept else 1 for c in sub]
                gj = np.broadcast_to(gj.reshape(shape), o.shape).copy()
            grads.append(gj)
        return tuple(grads)

    return _make(result, ops, bw, "einsum")


def linear(x, W, blas: bool = False):
    """Apply ``W`` (out, in) to the last axis of ``x``.

    The default einsum path evaluates every row with the same loop, so equal
    rows give bitwise-equal outputs; ``blas=True`` uses a faster matrix
    product without that guarantee.
    """
    x, W = as_tensor(x), as_tensor(W)
    if not blas:
        letters = string.ascii_lowercase[: x.ndim - 1]
        return einsum(f"{letters}y,zy->{letters}z", x, W)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = (x2 @ W.data.T).reshape(lead + (W.shape[0],))

    def bw(g):
        g2 = g.reshape(-1, W.shape[0])
        gx = (g2 @ W.data).reshape(x.shape) if x.requires_grad else None
        gW = g2.T @ x2 if W.requires_grad else None
        return gx, gW

    return _make(out, (x, W), bw, "linear")


def solve(A, b):
    """Batched ``A^{-1} b`` for square ``A`` (..., n, n) and ``b`` (..., n, k)."""
    A, b = as_tensor(A), as_tensor(b)
    x = np.linalg.solve(A.data, b.data)

    def bw(g):
        gb = np.linalg.solve(np.swapaxes(A.data, -1, -2), g)
        gA = -gb @ np.swapaxes(x, -1, -2)
        return unbroadcast(gA, A.shape), unbroadcast(gb, b.shape)

    return _make(x, (A, b), bw, "solve")


def softmax(a, axis=-1):
    """Softmax with max-subtraction."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def where(cond, a, b):
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, bool)
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (unbroadcast(np.where(cond, g, 0.0), a.shape),
                            unbroadcast(np.where(cond, 0.0, g), b.shape)), "where")
