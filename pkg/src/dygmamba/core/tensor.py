"""Dense tensors with tape-based (define-by-run) reverse-mode differentiation.

Every differentiable operation that touches a tensor with ``requires_grad``
appends one record to the active :class:`Tape`.  :func:`backward` walks the
records in exact reverse execution order and accumulates gradients into the
leaves (usually :class:`Parameter` objects).
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError, StateError

_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_default_dtype = np.float64


def set_precision(name: str) -> None:
    """Select the floating dtype (``"f64"`` or ``"f32"``) for new tensors."""
    global _default_dtype
    try:
        _default_dtype = _PRECISIONS[name]
    except KeyError:
        raise ContractError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}") from None


def get_dtype():
    return _default_dtype


def get_precision() -> str:
    return "f64" if _default_dtype == np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str):
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


class _Record:
    __slots__ = ("op", "out", "parents", "backward_fn")

    def __init__(self, op, out, parents, backward_fn):
        self.op = op
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Ordered log of differentiable operations executed since the last backward."""

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __len__(self):
        return len(self.records)

    def append(self, record: _Record) -> None:
        if self.consumed:
            # a fresh forward pass starts a new graph
            self.records = []
            self.consumed = False
        self.records.append(record)

    def clear(self) -> None:
        self.records = []
        self.consumed = False

    def ops(self) -> list[str]:
        return [r.op for r in self.records]


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True
        self.backward_calls = 0


_state = _State()


def active_tape() -> Tape:
    return _state.tape


@contextlib.contextmanager
def new_tape():
    """Run a block against a private tape (restores the previous one on exit)."""
    previous = _state.tape
    _state.tape = Tape()
    try:
        yield _state.tape
    finally:
        _state.tape = previous


@contextlib.contextmanager
def no_grad():
    previous = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def grad_enabled() -> bool:
    return _state.enabled


def backward_calls() -> int:
    """Number of completed backward passes on this thread."""
    return _state.backward_calls


class Tensor:
    """An n-dimensional float array that may participate in differentiation."""

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._leaf = True

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.item())

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar (implemented in ops) ---------------------------
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

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
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


class Parameter(Tensor):
    """A trainable leaf tensor with a persistent, zero-initialised gradient slot."""

    def __init__(self, data, name: str = "param", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.data = np.ascontiguousarray(self.data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> Tensor:
        return self

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")


def record(op: str, out_data: np.ndarray, parents: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Iterable[np.ndarray | None]]) -> Tensor:
    """Wrap ``out_data`` as a Tensor and log the op when any parent needs grads.

    ``backward_fn`` maps the upstream gradient to one gradient (or None) per parent.
    """
    check_finite(out_data, op)
    needs = _state.enabled and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        out._leaf = False
        _state.tape.append(_Record(op, out, tuple(parents), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    tape = _state.tape
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise StateError("backward called twice without a new forward pass")
    if not tape.records:
        raise StateError("backward called on an empty tape")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        parent_grads = rec.backward_fn(g)
        for parent, pg in zip(rec.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise StateError(f"{rec.op}: gradient shape {pg.shape} != operand shape {parent.shape}")
            if parent._leaf:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + pg
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
    tape.consumed = True
    _state.backward_calls += 1
