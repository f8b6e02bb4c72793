"""Dense float64 matrices with reverse-mode gradients.

The operator set is deliberately small: matmul, add, elementwise multiply,
sigmoid, relu, exp, log, power, clip, row L2-normalisation, reductions and
row gather/stack. That covers every objective in this package while keeping
each gradient rule short enough to audit by hand.

Every tensor is a 2-D float64 array; scalars are (1, 1) and vectors (1, n).
Construction rejects non-finite values, so overflow surfaces at the op that
produced it instead of three losses later.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


def as_matrix(values) -> Array:
    """Coerce scalars / 1-D sequences / 2-D arrays to a float64 matrix."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


def _unbroadcast(grad: Array, shape: tuple[int, int]) -> Array:
    """Sum `grad` over the axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ValueError(f"cannot reduce gradient {grad.shape} to {shape}")
    return out


class Tensor:
    """A node in the reverse-mode computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[Array], None] | None = None,
    ):
        self.values = as_matrix(values)
        if not np.isfinite(self.values).all():
            raise FloatingPointError("non-finite values entering the graph")
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def constant(values) -> "Tensor":
        return Tensor(values, requires_grad=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
            if self.grad.shape != self.values.shape:
                self.grad = np.broadcast_to(self.grad, self.values.shape).copy()
        else:
            self.grad += grad

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor.constant(other)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        out_values = self.values + other.values

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.shape))

        return Tensor(
            out_values,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
            _backward=backward,
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Tensor":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        out_values = self.values * other.values

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.values, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.values, other.shape))

        return Tensor(
            out_values,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
            _backward=backward,
        )

    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        out_values = self.values @ other.values

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad @ other.values.T)
            if other.requires_grad:
                other._accumulate(self.values.T @ grad)

        return Tensor(
            out_values,
            requires_grad=self.requires_grad or other.requires_grad,
            _parents=(self, other),
            _backward=backward,
        )

    __matmul__ = matmul

    def transpose(self) -> "Tensor":
        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad.T)

        return Tensor(
            self.values.T,
            requires_grad=self.requires_grad,
            _parents=(self,),
            _backward=backward,
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- elementwise nonlinearities --------------------------------------------

    def sigmoid(self) -> "Tensor":
        # Split formulation avoids overflow of exp for large |x|.
        v = self.values
        out_values = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                              np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad * out_values * (1.0 - out_values))

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def relu(self) -> "Tensor":
        out_values = np.maximum(self.values, 0.0)

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad * (self.values > 0.0))

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def exp(self) -> "Tensor":
        out_values = np.exp(self.values)

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad * out_values)

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def log(self) -> "Tensor":
        out_values = np.log(self.values)

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(grad / self.values)

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def power(self, exponent: float) -> "Tensor":
        """Elementwise power with a scalar exponent.

        exponent == 0 is a constant with zero gradient; exponents in (0, 1)
        must not meet zero values (the derivative diverges there).
        """
        exponent = float(exponent)
        out_values = self.values ** exponent

        def backward(grad: Array) -> None:
            if self.requires_grad:
                if exponent == 0.0:
                    return
                self._accumulate(grad * exponent * self.values ** (exponent - 1.0))

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def clip(self, lo: float, hi: float) -> "Tensor":
        out_values = np.clip(self.values, lo, hi)

        def backward(grad: Array) -> None:
            if self.requires_grad:
                inside = (self.values > lo) & (self.values < hi)
                self._accumulate(grad * inside)

        return Tensor(out_values, self.requires_grad, (self,), backward)

    # -- reductions and structure ----------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        """Sum over all entries (axis=None, -> (1,1)) or one axis (keepdims)."""
        if axis is None:
            out_values = self.values.sum().reshape(1, 1)
        else:
            out_values = self.values.sum(axis=axis, keepdims=True)

        def backward(grad: Array) -> None:
            if self.requires_grad:
                self._accumulate(np.broadcast_to(grad, self.shape).copy())

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def mean(self) -> "Tensor":
        n = self.values.size
        if n == 0:
            raise ValueError("mean of an empty tensor")
        return self.sum() * (1.0 / n)

    def row_l2_normalize(self, eps: float = 1e-12) -> "Tensor":
        """Scale each row to unit L2 norm (rows are assumed non-degenerate;
        norms are floored at eps so all-zero rows stay zero)."""
        norms = np.maximum(np.linalg.norm(self.values, axis=1, keepdims=True), eps)
        out_values = self.values / norms

        def backward(grad: Array) -> None:
            if self.requires_grad:
                inner = (grad * out_values).sum(axis=1, keepdims=True)
                self._accumulate((grad - out_values * inner) / norms)

        return Tensor(out_values, self.requires_grad, (self,), backward)

    def take_rows(self, indices) -> "Tensor":
        idx = np.asarray(indices, dtype=np.intp)
        out_values = self.values[idx]

        def backward(grad: Array) -> None:
            if self.requires_grad:
                scattered = np.zeros_like(self.values)
                np.add.at(scattered, idx, grad)
                self._accumulate(scattered)

        return Tensor(out_values, self.requires_grad, (self,), backward)

    # -- graph traversal --------------------------------------------------------

    def backward(self) -> None:
        """Reverse pass from a single-element tensor, accumulating grads."""
        if self.values.size != 1:
            raise ValueError("backward() requires a scalar tensor")
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate tensors along rows, routing gradients back to each block."""
    if not tensors:
        raise ValueError("vstack of an empty sequence")
    cols = tensors[0].shape[1]
    for t in tensors:
        if t.shape[1] != cols:
            raise ValueError("vstack requires a common column count")
    out_values = np.concatenate([t.values for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(grad: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(grad[lo:hi])

    return Tensor(
        out_values,
        requires_grad=any(t.requires_grad for t in tensors),
        _parents=tuple(tensors),
        _backward=backward,
    )
