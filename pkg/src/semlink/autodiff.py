"""Minimal reverse-mode tape over numpy arrays.

Just enough machinery for the inversion objectives: a :class:`Var` node
records its parents and a vector-Jacobian-product closure; :func:`backward`
walks the graph once in reverse topological order. Values are float64
ndarrays, except scalar-valued ops (mean, dot, cosine) which carry plain
floats. Convolution and pooling route through :mod:`semlink.kernels`.

The central-difference oracle in :mod:`semlink.optim` deliberately shares no
code with this module.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class Var:
    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents: tuple["Var", ...] = (), vjp=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    # scalar sugar used by the loss combinators
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

    def __neg__(self):
        return scale(self, -1.0)


def var(value) -> Var:
    """Leaf node (input or constant); gradients accumulate on every leaf."""
    if isinstance(value, np.ndarray):
        return Var(np.asarray(value, dtype=float))
    return Var(value)


def custom(value, parents: tuple[Var, ...], vjp: Callable) -> Var:
    """Node with a caller-supplied VJP returning one cotangent per parent."""
    return Var(value, parents, vjp)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else var(x)


def backward(root: Var, seed=1.0) -> None:
    """Populate .grad on every node reachable from root."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    root.grad = seed
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        cots = node.vjp(node.grad)
        for parent, cot in zip(node.parents, cots):
            if cot is None:
                continue
            if parent.grad is None:
                parent.grad = cot
            else:
                parent.grad = parent.grad + cot


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    return custom(a.value + b.value, (a, b), lambda c: (c, c))


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    return custom(a.value - b.value, (a, b), lambda c: (c, -c if np.isscalar(c) else np.negative(c)))


def mul(a, b) -> Var:
    if not isinstance(b, Var) and np.isscalar(b):
        return scale(_as_var(a), float(b))
    if not isinstance(a, Var) and np.isscalar(a):
        return scale(_as_var(b), float(a))
    a, b = _as_var(a), _as_var(b)
    return custom(a.value * b.value, (a, b), lambda c: (c * b.value, c * a.value))


def scale(a: Var, s: float) -> Var:
    return custom(a.value * s, (a,), lambda c: (c * s,))


def mean(a: Var) -> Var:
    n = a.value.size
    return custom(float(np.mean(a.value)), (a,), lambda c: (np.full(a.value.shape, c / n),))


def absolute(a: Var) -> Var:
    # subgradient 0 at exact ties, so gradients stay deterministic
    return custom(np.abs(a.value), (a,), lambda c: (c * np.sign(a.value),))


def tanh(a: Var) -> Var:
    t = np.tanh(a.value)
    return custom(t, (a,), lambda c: (c * (1.0 - t * t),))


def gather(a: Var, idx: np.ndarray) -> Var:
    def vjp(c):
        g = np.zeros(a.value.shape)
        np.add.at(g, idx, c)
        return (g,)

    return custom(a.value[idx], (a,), vjp)


def assemble(a: Var, idx: np.ndarray, base: np.ndarray) -> Var:
    """Scatter a's entries into a copy of base at positions idx."""
    out = np.array(base, dtype=float, copy=True)
    out[idx] = a.value
    return custom(out, (a,), lambda c: (c[idx],))


def concat(parts: Sequence[Var]) -> Var:
    parts = [_as_var(p) for p in parts]
    sizes = [p.value.size for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(c):
        return tuple(np.split(c, splits))

    return custom(np.concatenate([p.value for p in parts]), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# structured ops


def power_normalize(a: Var, k: int, power: float) -> Var:
    """Scale a flat real vector so the paired-complex signal energy is k*power."""
    y = a.value
    energy = float(np.dot(y, y))
    if energy == 0.0:
        from .errors import DegenerateSignalError

        raise DegenerateSignalError("zero-norm latent cannot satisfy the power constraint")
    s = np.sqrt(k * power / energy)
    out = y * s

    def vjp(c):
        return (s * (c - y * (np.dot(y, c) / energy)),)

    return custom(out, (a,), vjp)


def conv2d(a: Var, kern: np.ndarray) -> Var:
    return custom(kernels.conv2d_valid(a.value, kern), (a,),
                  lambda c: (kernels.conv2d_valid_vjp(c, kern),))


def avgpool2(a: Var) -> Var:
    shape = a.value.shape
    return custom(kernels.avgpool2(a.value), (a,),
                  lambda c: (kernels.avgpool2_vjp(c, shape),))


def channel_normalize(a: Var, eps: float = 1e-10) -> Var:
    """Unit-normalize (C,H,W) features across the channel axis per pixel."""
    x = a.value
    denom = np.sqrt(np.sum(x * x, axis=0, keepdims=True) + eps * eps)
    out = x / denom

    def vjp(c):
        inner = np.sum(x * c, axis=0, keepdims=True)
        return (c / denom - x * (inner / denom ** 3),)

    return custom(out, (a,), vjp)


def spatial_mean(a: Var) -> Var:
    """(C,H,W) -> (C,) mean over the spatial axes."""
    c_, h, w = a.value.shape
    return custom(a.value.mean(axis=(1, 2)), (a,),
                  lambda c: (np.repeat(c, h * w).reshape(c_, h, w) / (h * w),))


def cosine(a: Var, b: Var, eps: float = 1e-12) -> Var:
    """Cosine similarity of two flat vectors; 0 (with zero gradient) if either
    norm falls below eps.

    The denominator is sqrt(dot(u,u) * dot(v,v)) so cosine(v, v) is exactly
    1.0 and cosine(v, -v) exactly -1.0 in floating point.
    """
    u, v = a.value, b.value
    nu2 = float(np.dot(u, u))
    nv2 = float(np.dot(v, v))
    if nu2 < eps * eps or nv2 < eps * eps:
        return custom(0.0, (a, b), lambda c: (np.zeros_like(u), np.zeros_like(v)))
    denom = np.sqrt(nu2 * nv2)
    cos = float(np.dot(u, v) / denom)

    def vjp(c):
        ga = c * (v / denom - u * (cos / nu2))
        gb = c * (u / denom - v * (cos / nv2))
        return (ga, gb)

    return custom(cos, (a, b), vjp)
