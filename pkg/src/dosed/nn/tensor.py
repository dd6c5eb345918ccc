"""A small reverse-mode autodiff tensor over float64 numpy arrays."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """float64 array plus an optional gradient and the closure that produced it.

    ``backward_fn`` maps the gradient w.r.t. this tensor to gradients w.r.t.
    ``parents`` (``None`` where a parent needs none).
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward_fn: BackwardFn | None = None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tensor that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
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
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        # interior nodes start fresh; leaves keep accumulating
        for node in order:
            if node.backward_fn is not None:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64) + (0.0 if self.grad is None else self.grad)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for p, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    # operator sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.add(self, F.neg(as_tensor(other)))

    def __rsub__(self, other):
        from . import functional as F

        return F.add(as_tensor(other), F.neg(self))

    def __neg__(self):
        from . import functional as F

        return F.neg(self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F

        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return F.mul(self, 1.0 / other)

    def __getitem__(self, index):
        from . import functional as F

        return F.take(self, index)

    def sum(self, axis=None):
        from . import functional as F

        return F.sum(self, axis)

    def mean(self, axis=None):
        from . import functional as F

        return F.mean(self, axis)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)
