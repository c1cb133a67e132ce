"""Tensor type and the reverse-mode graph engine.

A ``Tensor`` wraps a NumPy array. Operations that receive at least one
tensor with ``requires_grad`` set record a node holding their parents and a
vector-Jacobian closure; :func:`backprop` walks those nodes in reverse
topological order and accumulates gradients on the leaves.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32

VjpFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class AutodiffError(RuntimeError):
    """Base class for graph and kernel errors."""


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class GraphConsumedError(AutodiffError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: VjpFn | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed_grad=None, retain_graph: bool = False) -> None:
        backprop(self, seed_grad, retain_graph)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar, defined in ops to keep this module free of kernels
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Iterable[Tensor], vjp: VjpFn) -> Tensor:
    """Wrap a forward result, recording the node only if a parent needs grad."""
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backprop(output: Tensor, seed_grad=None, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every leaf reachable from ``output``.

    Leaf gradients accumulate additively, both within one graph (a tensor used
    twice) and across calls. Interior nodes are released after the pass unless
    ``retain_graph`` is set, so a second call on the same graph raises
    :class:`GraphConsumedError`.
    """
    if output._consumed:
        raise GraphConsumedError("graph already consumed by a previous backprop")
    if not output.requires_grad:
        return
    if seed_grad is None:
        seed = np.ones_like(output.data)
    else:
        seed = np.asarray(seed_grad.data if isinstance(seed_grad, Tensor) else seed_grad,
                          dtype=output.data.dtype)
        if seed.shape != output.shape:
            raise ShapeError(f"seed shape {seed.shape} != output shape {output.shape}")

    order = _toposort(output)
    grads: dict[int, np.ndarray] = {id(output): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient reached {node!r}")
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if node._consumed:
            raise GraphConsumedError("graph already consumed by a previous backprop")
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
        if retain_graph:
            continue
        node._consumed = True
        node._vjp = _consumed_vjp
        node._parents = ()


def _consumed_vjp(_g):
    raise GraphConsumedError("graph already consumed by a previous backprop")
