"""
Minimal reverse-mode automatic differentiation over 2-D float64 arrays.

Only the operations the DRLA networks need are provided; there is no implicit
broadcasting, every op checks its operand shapes.
"""
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from flmarket.core.exceptions import InvalidInputError


def _as_matrix(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    if array.ndim == 0:
        return array.reshape(1, 1)
    if array.ndim == 1:
        return array.reshape(1, -1)
    if array.ndim != 2:
        raise InvalidInputError(f"tensors are 2-D, got {array.ndim} dimensions")
    return array


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable[[np.ndarray], None]] = None):
        self.value = _as_matrix(value)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise InvalidInputError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value, name: Optional[str] = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise InvalidInputError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    out = Tensor(a.value @ b.value, _parents=(a, b))

    def backward(grad):
        a._accumulate(grad @ b.value.T)
        b._accumulate(a.value.T @ grad)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    out = Tensor(a.value + b.value, _parents=(a, b))

    def backward(grad):
        a._accumulate(grad)
        b._accumulate(grad)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    out = Tensor(a.value - b.value, _parents=(a, b))

    def backward(grad):
        a._accumulate(grad)
        b._accumulate(-grad)

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    out = Tensor(a.value * b.value, _parents=(a, b))

    def backward(grad):
        a._accumulate(grad * b.value)
        b._accumulate(grad * a.value)

    out._backward = backward
    return out


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """a + row, with a (1, k) row repeated over the rows of a."""
    if row.shape != (1, a.shape[1]):
        raise InvalidInputError(f"add_row: row must be (1, {a.shape[1]}), got {row.shape}")
    out = Tensor(a.value + row.value, _parents=(a, row))

    def backward(grad):
        a._accumulate(grad)
        row._accumulate(grad.sum(axis=0, keepdims=True))

    out._backward = backward
    return out


def mul_row(a: Tensor, row: Tensor) -> Tensor:
    """Elementwise a * row, with a (1, k) row repeated over the rows of a."""
    if row.shape != (1, a.shape[1]):
        raise InvalidInputError(f"mul_row: row must be (1, {a.shape[1]}), got {row.shape}")
    out = Tensor(a.value * row.value, _parents=(a, row))

    def backward(grad):
        a._accumulate(grad * row.value)
        row._accumulate((grad * a.value).sum(axis=0, keepdims=True))

    out._backward = backward
    return out


def mul_scalar_tensor(a: Tensor, s: Tensor) -> Tensor:
    """a * s for a (1, 1) tensor s."""
    if s.shape != (1, 1):
        raise InvalidInputError(f"mul_scalar_tensor: scalar must be (1, 1), got {s.shape}")
    out = Tensor(a.value * s.value[0, 0], _parents=(a, s))

    def backward(grad):
        a._accumulate(grad * s.value[0, 0])
        s._accumulate(np.array([[np.sum(grad * a.value)]]))

    out._backward = backward
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.value * factor, _parents=(a,))
    out._backward = lambda grad: a._accumulate(grad * factor)
    return out


def add_scalar(a: Tensor, shift: float) -> Tensor:
    out = Tensor(a.value + shift, _parents=(a,))
    out._backward = lambda grad: a._accumulate(grad)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0  # subgradient 0 at the kink
    out = Tensor(np.where(mask, a.value, 0.0), _parents=(a,))
    out._backward = lambda grad: a._accumulate(grad * mask)
    return out


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.value)
    out = Tensor(value, _parents=(a,))
    out._backward = lambda grad: a._accumulate(grad * value)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.value ** 2, _parents=(a,))
    out._backward = lambda grad: a._accumulate(2.0 * grad * a.value)
    return out


def rowsum(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(axis=1, keepdims=True), _parents=(a,))
    out._backward = lambda grad: a._accumulate(np.repeat(grad, a.shape[1], axis=1))
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.value.sum()]]), _parents=(a,))
    out._backward = lambda grad: a._accumulate(np.full(a.shape, grad[0, 0]))
    return out


def mean(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.value.size)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise InvalidInputError(f"concat_cols: row counts differ {sorted(rows)}")
    widths = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=1), _parents=tuple(parts))
    bounds = np.cumsum([0] + widths)

    def backward(grad):
        for part, start, stop in zip(parts, bounds[:-1], bounds[1:]):
            part._accumulate(grad[:, start:stop])

    out._backward = backward
    return out


def gather_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    index = np.asarray(index, dtype=int)
    out = Tensor(a.value[index], _parents=(a,))

    def backward(grad):
        full = np.zeros_like(a.value)
        np.add.at(full, index, grad)
        a._accumulate(full)

    out._backward = backward
    return out


def segment_sum(a: Tensor, segments: Sequence[Tuple[int, int]]) -> Tensor:
    """Row sums of each [start, stop) block of rows, one output row per block."""
    out = Tensor(np.stack([a.value[s:e].sum(axis=0) for s, e in segments]), _parents=(a,))

    def backward(grad):
        full = np.zeros_like(a.value)
        for k, (s, e) in enumerate(segments):
            full[s:e] = grad[k]
        a._accumulate(full)

    out._backward = backward
    return out


def block_propagate(blocks: Sequence[np.ndarray], a: Tensor, segments: Sequence[Tuple[int, int]]) -> Tensor:
    """Block-diagonal product: rows [s, e) of a are multiplied by their own constant block."""
    value = np.empty_like(a.value)
    for block, (s, e) in zip(blocks, segments):
        if block.shape != (e - s, e - s):
            raise InvalidInputError(f"block_propagate: block {block.shape} does not fit rows [{s}, {e})")
        value[s:e] = block @ a.value[s:e]
    out = Tensor(value, _parents=(a,))

    def backward(grad):
        full = np.empty_like(a.value)
        for block, (s, e) in zip(blocks, segments):
            full[s:e] = block.T @ grad[s:e]
        a._accumulate(full)

    out._backward = backward
    return out


def _reduce_groups(a: Tensor, group_size: int, take_max: bool) -> Tensor:
    rows, cols = a.shape
    if group_size <= 0 or cols % group_size != 0:
        raise InvalidInputError(f"cannot split {cols} columns into groups of {group_size}")
    grouped = a.value.reshape(rows, cols // group_size, group_size)
    # argmax/argmin return the first attaining index
    picked = grouped.argmax(axis=2) if take_max else grouped.argmin(axis=2)
    value = np.take_along_axis(grouped, picked[..., None], axis=2)[..., 0]
    out = Tensor(value, _parents=(a,))

    def backward(grad):
        full = np.zeros_like(grouped)
        np.put_along_axis(full, picked[..., None], grad[..., None], axis=2)
        a._accumulate(full.reshape(rows, cols))

    out._backward = backward
    return out


def max_groups(a: Tensor, group_size: int) -> Tensor:
    return _reduce_groups(a, group_size, take_max=True)


def min_groups(a: Tensor, group_size: int) -> Tensor:
    return _reduce_groups(a, group_size, take_max=False)


def max_cols(a: Tensor) -> Tensor:
    return _reduce_groups(a, a.shape[1], take_max=True)


def min_cols(a: Tensor) -> Tensor:
    return _reduce_groups(a, a.shape[1], take_max=False)


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf tensor that requires a gradient."""
    if loss.shape != (1, 1):
        raise InvalidInputError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            node._accumulate(grad)
            continue
        # route gradients through a scratch slot on each parent
        saved = [(p, p.grad) for p in node._parents]
        for p in node._parents:
            p.grad = None
        node._backward(grad)
        for parent, previous in saved:
            contribution = parent.grad
            parent.grad = previous
            if contribution is None:
                continue
            key = id(parent)
            grads[key] = contribution if key not in grads else grads[key] + contribution


def numerical_gradient(f: Callable[[], float], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function with respect to one parameter."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for k in range(flat.size):
        original = flat[k]
        flat[k] = original + eps
        upper = f()
        flat[k] = original - eps
        lower = f()
        flat[k] = original
        grad.reshape(-1)[k] = (upper - lower) / (2.0 * eps)
    return grad
