"""
Array-valued reverse-mode automatic differentiation.

Every :class:`Tensor` produced by an operation remembers its parents and a
backward rule. Backward rules are written with the same ``Tensor``
operations as the forward pass, so a backward pass run with
``create_graph=True`` is itself recorded and can be differentiated again
(double backward). That is how the second derivatives of the network
outputs with respect to the space coordinates are obtained.

All arithmetic is float64. Grad recording is controlled per thread, so
distinct graphs can be built concurrently on distinct threads.
"""

import contextlib
import itertools
import threading
from typing import Any, Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from jpinn.exceptions import DomainError, NumericFailureError

ArrayLike = Union["Tensor", np.ndarray, float, int]
Backward = Callable[["Tensor", "Tensor", Tuple[bool, ...]], Tuple[Optional["Tensor"], ...]]

_node_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations on this thread are currently being recorded."""
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    previous = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = previous


def no_grad() -> contextlib.AbstractContextManager:
    """Context manager that disables recording on the current thread."""
    return _grad_mode(False)


def enable_grad() -> contextlib.AbstractContextManager:
    """Context manager that enables recording on the current thread."""
    return _grad_mode(True)


class Tensor:
    """A float64 array node of the computation graph."""

    __slots__ = ("data", "requires_grad", "parents", "backward_rule", "op", "id", "name")
    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_rule: Optional[Backward] = None
        self.op = "leaf"
        self.id = next(_node_ids)
        self.name = name

    # ------------------------------------------------------------------ info
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def describe(self) -> str:
        label = f"{self.op}#{self.id}"
        return f"{label}({self.name})" if self.name else label

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------- operators
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, tuple(shape))


def as_tensor(value: ArrayLike) -> Tensor:
    """Wrap constants as non-recording tensors; tensors pass through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(op: str, value: np.ndarray, parents: Tuple[Tensor, ...], rule: Backward) -> Tensor:
    out = Tensor(value)
    out.op = op
    if not np.all(np.isfinite(out.data)):
        raise NumericFailureError(
            f"Non-finite value produced by {op}",
            node=out.describe(),
            details={"parents": [p.describe() for p in parents]},
        )
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_rule = rule
    return out


def unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum ``g`` over the axes that broadcasting added or stretched to reach its shape."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, size in enumerate(shape) if size == 1 and g.shape[i + lead] != 1
    )
    if axes:
        g = tensor_sum(g, axis=axes, keepdims=True)
    return reshape(g, shape)


# ---------------------------------------------------------------- arithmetic
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (
            unbroadcast(g, a.shape) if needs[0] else None,
            unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _record("add", a.data + b.data, (a, b), rule)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (
            unbroadcast(g, a.shape) if needs[0] else None,
            unbroadcast(neg(g), b.shape) if needs[1] else None,
        )

    return _record("sub", a.data - b.data, (a, b), rule)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (
            unbroadcast(mul(g, b), a.shape) if needs[0] else None,
            unbroadcast(mul(g, a), b.shape) if needs[1] else None,
        )

    return _record("mul", a.data * b.data, (a, b), rule)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise DomainError("Division by zero", node=f"div<-{b.describe()}")

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (
            unbroadcast(div(g, b), a.shape) if needs[0] else None,
            unbroadcast(neg(div(mul(g, out), b)), b.shape) if needs[1] else None,
        )

    return _record("div", a.data / b.data, (a, b), rule)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (neg(g),)

    return _record("neg", -a.data, (a,), rule)


def power(a: ArrayLike, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant exponent."""
    a = as_tensor(a)
    exponent = float(exponent)
    if not exponent.is_integer() and np.any(a.data < 0):
        raise DomainError("Fractional power of a negative value", node=f"pow<-{a.describe()}")

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        if exponent == 0.0:
            return (mul(g, 0.0),)
        if exponent == 1.0:
            return (g,)
        if exponent == 2.0:
            return (mul(g, mul(a, 2.0)),)
        return (mul(g, mul(power(a, exponent - 1.0), exponent)),)

    return _record("pow", a.data**exponent, (a,), rule)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return _record("matmul", a.data @ b.data, (a, b), rule)


def transpose(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (transpose(g),)

    return _record("transpose", a.data.T, (a,), rule)


# ------------------------------------------------------------------- shaping
def tensor_sum(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    value = np.sum(a.data, axis=axis, keepdims=True)
    kept_shape = value.shape
    if not keepdims:
        value = np.sum(a.data, axis=axis)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _record("sum", value, (a,), rule)


def mean(a: ArrayLike, axis: Any = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(tensor_sum(a, axis=axis, keepdims=keepdims), float(count))


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (reshape(g, a.shape),)

    return _record("reshape", a.data.reshape(shape), (a,), rule)


def broadcast_to(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (unbroadcast(g, a.shape),)

    return _record("broadcast", np.broadcast_to(a.data, shape).copy(), (a,), rule)


def getitem(a: ArrayLike, index: Any) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (scatter(g, index, a.shape),)

    return _record("getitem", a.data[index], (a,), rule)


def scatter(a: ArrayLike, index: Any, shape: Tuple[int, ...]) -> Tensor:
    """Place ``a`` at ``index`` of a zero array of ``shape`` (adjoint of indexing)."""
    a = as_tensor(a)
    value = np.zeros(shape)
    np.add.at(value, index, a.data)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (getitem(g, index),)

    return _record("scatter", value, (a,), rule)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(t) for t in tensors)
    value = np.concatenate([p.data for p in parts], axis=axis)
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        grads = []
        for i, need in enumerate(needs):
            if not need:
                grads.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[ax] = slice(int(bounds[i]), int(bounds[i + 1]))
            grads.append(getitem(g, tuple(index)))
        return tuple(grads)

    return _record("concat", value, parts, rule)


# --------------------------------------------------------------- elementwise
def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (mul(g, out),)

    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    return _record("exp", value, (a,), rule)


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        bad = int(np.flatnonzero(a.data.ravel() <= 0)[0])
        raise DomainError(
            "log of a non-positive value",
            node=f"log<-{a.describe()}",
            sample=bad,
            details={"value": float(a.data.ravel()[bad])},
        )

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (div(g, a),)

    return _record("log", np.log(a.data), (a,), rule)


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value", node=f"sqrt<-{a.describe()}")

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (div(mul(g, 0.5), out),)

    return _record("sqrt", np.sqrt(a.data), (a,), rule)


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (mul(g, sub(1.0, mul(out, out))),)

    return _record("tanh", np.tanh(a.data), (a,), rule)


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (mul(g, mul(out, sub(1.0, out))),)

    # tanh form stays finite for large |a|
    return _record("sigmoid", 0.5 * (1.0 + np.tanh(0.5 * a.data)), (a,), rule)


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        return (mul(g, mask),)

    return _record("relu", a.data * mask, (a,), rule)


def elu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    value = np.where(mask > 0, a.data, np.expm1(np.minimum(a.data, 0.0)))

    def rule(g: Tensor, out: Tensor, needs: Tuple[bool, ...]) -> Tuple[Optional[Tensor], ...]:
        # d/da = 1 above zero, exp(a) = out + 1 below; the right derivative at 0 is 1
        slope = add(mask, mul(add(out, 1.0), 1.0 - mask))
        return (mul(g, slope),)

    return _record("elu", value, (a,), rule)


def swish(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return mul(a, sigmoid(a))


def identity(a: ArrayLike) -> Tensor:
    return as_tensor(a)


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, tensor_sum(e, axis=axis, keepdims=True))


ACTIVATIONS = {
    "swish": swish,
    "elu": elu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "linear": identity,
}
