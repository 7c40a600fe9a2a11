"""Tensor value type and the define-by-run computation tape."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class NonFiniteError(NumericError):
    """Raised when an operation produces NaN or Inf."""


def _check_finite(data: np.ndarray, where: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {where}")


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Instances are treated as immutable values. Operations on tensors that
    track gradients are recorded on the current thread's tape.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_op", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _op: str | None = None, _check: bool = True):
        arr = np.asarray(data, dtype=DTYPE)
        if _check:
            _check_finite(arr, _op or "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._op = _op

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, _check=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self, grad=None, retain_tape: bool = False) -> None:
        get_tape().backward(self, grad, retain=retain_tape)

    # -- operator sugar; implementations live in ops.py ----------------
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        from . import ops
        return ops.swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations executed on one thread."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.enabled = True

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.nodes.append(_Node(out, inputs, backward))

    def clear(self) -> None:
        self.nodes.clear()

    def backward(self, root: Tensor, grad=None, retain: bool = False) -> None:
        """Replay adjoints in reverse order, accumulating into leaf ``.grad``."""
        if grad is None:
            if root.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an explicit grad")
            grad = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=DTYPE)}
        leaves: dict[int, Tensor] = {}
        if root.is_leaf and root.requires_grad:
            leaves[id(root)] = root
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.is_leaf:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            _check_finite(g, "backward pass")
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        if not retain:
            self.clear()


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextmanager
def no_grad():
    """Disable recording on this thread's tape."""
    tape = get_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def make_op(name: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as a tensor and record ``backward`` if any input tracks gradients.

    ``backward`` maps the output adjoint to one adjoint (or None) per input.
    """
    out = Tensor(out_data, _op=name)
    tape = get_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward)
    return out
