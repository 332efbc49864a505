"""Reverse-mode autodiff tensor.

A Tensor wraps a numpy array plus the bookkeeping needed for reverse-mode
differentiation: the parent tensors it was computed from and a closure
that pushes its output gradient back onto them. `backward()` replays
these closures in exact reverse topological order; gradients accumulate
with += so parameters used several times are handled correctly.

Training runs in float32; gradient-check tests build float64 graphs, so
every op must preserve the input dtype.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

# When True, every op forward and every backward closure verifies that it
# produced only finite values and raises NonFiniteError naming the op.
# Off by default: the training loop checks the loss each step instead.
nan_guard = False


class NonFiniteError(FloatingPointError):
    """An op produced NaN or inf; the message names the op."""


def guard(value: np.ndarray, op: str) -> None:
    if nan_guard and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Iterable["Tensor"] = (),
        backward: Optional[Callable[[], None]] = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor through the recorded graph."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
                if nan_guard:
                    for p in node._parents:
                        if p.grad is not None:
                            guard(p.grad, node.op + ".backward")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def parameter(data, name: str = "") -> Tensor:
    """A trainable leaf tensor."""
    t = Tensor(np.asarray(data), requires_grad=True, op=name or "param")
    return t


def op_node(data, parents, op: str) -> Tensor:
    """Build an op output node; graph capture is skipped in inference mode.

    The caller attaches `._backward` afterwards iff `out.requires_grad`.
    """
    data = np.asarray(data)
    guard(data, op)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, requires_grad=False, op=op)
    return Tensor(data, requires_grad=True, parents=parents, op=op)
