"""Minimal reverse-mode autodiff over float64 numpy arrays.

Ops dispatch on argument type: with plain ndarrays they run as bare numpy,
with Node arguments they record vector-Jacobian callbacks on a tape.  The
same forward code therefore serves inference (cheap) and training (traced),
and the two paths are bit-identical because they execute the same numpy
expressions.

The contract for gradients is the finite-difference check in the test
suite, not any particular tape mechanism.
"""

from __future__ import annotations

import numpy as np


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf shows up where finite values are required."""


def leaf(x) -> Node:
    """Wrap an array as a graph leaf (a trainable parameter)."""
    return Node(x)


def is_node(x) -> bool:
    return isinstance(x, Node)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _record(out_value, pairs):
    parents = tuple(n for n, _ in pairs)
    vjps = tuple(f for _, f in pairs)
    return Node(out_value, parents, vjps)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not (is_node(a) or is_node(b)):
        return out
    pairs = []
    if is_node(a):
        pairs.append((a, lambda g: _unbroadcast(g, av.shape)))
    if is_node(b):
        pairs.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return _record(out, pairs)


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not (is_node(a) or is_node(b)):
        return out
    pairs = []
    if is_node(a):
        pairs.append((a, lambda g: _unbroadcast(g, av.shape)))
    if is_node(b):
        pairs.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return _record(out, pairs)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not (is_node(a) or is_node(b)):
        return out
    pairs = []
    if is_node(a):
        pairs.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if is_node(b):
        pairs.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return _record(out, pairs)


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not (is_node(a) or is_node(b)):
        return out
    pairs = []
    if is_node(a):
        pairs.append((a, lambda g: _unbroadcast(g / bv, av.shape)))
    if is_node(b):
        pairs.append((b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))
    return _record(out, pairs)


def neg(a):
    av = value_of(a)
    if not is_node(a):
        return -av
    return _record(-av, [(a, lambda g: -g)])


def matmul(a, b):
    """Matrix product; operands must be >= 2-D (batched stacks allowed)."""
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if not (is_node(a) or is_node(b)):
        return out
    pairs = []
    if is_node(a):
        pairs.append((a, lambda g: _unbroadcast(g @ bv.swapaxes(-1, -2), av.shape)))
    if is_node(b):
        pairs.append((b, lambda g: _unbroadcast(av.swapaxes(-1, -2) @ g, bv.shape)))
    return _record(out, pairs)


def tanh(a):
    av = value_of(a)
    t = np.tanh(av)
    if not is_node(a):
        return t
    return _record(t, [(a, lambda g: g * (1.0 - t * t))])


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    if not is_node(a):
        return out
    mask = av > 0.0
    return _record(out, [(a, lambda g: g * mask)])


def exp(a):
    av = value_of(a)
    out = np.exp(av)
    if not is_node(a):
        return out
    return _record(out, [(a, lambda g: g * out)])


def log(a):
    av = value_of(a)
    out = np.log(av)
    if not is_node(a):
        return out
    return _record(out, [(a, lambda g: g / av)])


def square(a):
    av = value_of(a)
    out = av * av
    if not is_node(a):
        return out
    return _record(out, [(a, lambda g: g * 2.0 * av)])


def power_const(a, p: float):
    av = value_of(a)
    out = av ** p
    if not is_node(a):
        return out
    return _record(out, [(a, lambda g: g * p * av ** (p - 1.0))])


def clip(a, lo: float, hi: float):
    """Hard clip; gradient passes through inside [lo, hi], zero outside."""
    av = value_of(a)
    out = np.clip(av, lo, hi)
    if not is_node(a):
        return out
    mask = (av >= lo) & (av <= hi)
    return _record(out, [(a, lambda g: g * mask)])


def sum_(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not is_node(a):
        return out

    def vjp(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _record(out, [(a, vjp)])


def mean_(a, axis=None, keepdims=False):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    out = av.mean(axis=axis, keepdims=keepdims)
    if not is_node(a):
        return out

    def vjp(g):
        gg = np.asarray(g) / n
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return np.broadcast_to(gg, av.shape).copy()

    return _record(out, [(a, vjp)])


def concat(parts, axis=-1):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not any(is_node(p) for p in parts):
        return out
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    pairs = []
    for i, p in enumerate(parts):
        if not is_node(p):
            continue
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        pairs.append((p, vjp))
    return _record(out, pairs)


def slice_last(a, start: int, stop: int):
    """Slice along the last axis."""
    av = value_of(a)
    out = av[..., start:stop]
    if not is_node(a):
        return out

    def vjp(g):
        full = np.zeros_like(av)
        full[..., start:stop] = g
        return full

    return _record(out, [(a, vjp)])


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not is_node(a):
        return out
    return _record(out, [(a, lambda g: g.reshape(av.shape))])


def stop_gradient(a) -> np.ndarray:
    """Detach: downstream ops see a constant."""
    return value_of(a)


def backward(root: Node) -> dict:
    """Accumulate gradients of a scalar root w.r.t. every reachable node.

    Returns a dict keyed by node identity; look up the leaves you created
    for the parameters you are training.
    """
    root_value = value_of(root)
    if root_value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root_value.shape}")
    if not np.isfinite(root_value):
        raise NonFiniteError("loss is not finite")

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    by_id: dict[int, Node] = {id(root): root}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(g)
            pid = id(parent)
            by_id[pid] = parent
            if pid in grads:
                grads[pid] = grads[pid] + contribution
            else:
                grads[pid] = np.asarray(contribution, dtype=np.float64)
    return {by_id[k]: v for k, v in grads.items()}


def grad_for(grads: dict, node: Node) -> np.ndarray:
    """Gradient of a leaf, zero-filled if the loss never touched it."""
    g = grads.get(node)
    if g is None:
        return np.zeros_like(node.value)
    return np.asarray(g, dtype=np.float64).reshape(node.value.shape)
