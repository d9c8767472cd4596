"""Tensor storage and a tape-based reverse-mode differentiation core.

Values are float64 throughout, laid out row-major. Rank-3 activations use
the (batch, channel, time) axis order so 1-D convolution inner loops stride
contiguously over time. Differentiable operations record onto the innermost
active ``GradTape``; replaying the tape in reverse visits operations in exact
reverse execution order and accumulates gradients additively, so a value
consumed by k operations receives the sum of k contributions.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "tensor3",
    "set_debug_checks",
    "debug_checks_enabled",
    "record_op",
    "active_tape",
    "backward",
    "elementwise",
    "add",
    "sub",
    "mul",
    "tanh",
    "sigmoid",
    "relu",
    "scale",
    "sum_all",
    "mean_all",
    "split_channels",
    "concat_channels",
    "time_slice",
    "stack_time",
]

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle non-finite detection on op outputs (off by default: inner-loop cost)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


class Tensor:
    """A float64 array node in the computation graph.

    Leaves are built directly (parameters, input batches) and are validated
    to be finite. Operation outputs are wrapped internally and checked for
    non-finite values only when debug checks are enabled.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name or '<unnamed>'!r} contains non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"operation {op!r} produced non-finite values")
        t = object.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def _axis(self, i: int) -> int:
        if self.data.ndim != 3:
            raise ValueError(f"rank-3 accessor on tensor of shape {self.shape}")
        return self.data.shape[i]

    @property
    def batch(self) -> int:
        return self._axis(0)

    @property
    def channels(self) -> int:
        return self._axis(1)

    @property
    def time(self) -> int:
        return self._axis(2)

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor3(values, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Construct a rank-3 (batch, channel, time) tensor, rejecting other ranks."""
    t = Tensor(values, requires_grad=requires_grad, name=name)
    if t.ndim != 3:
        raise ValueError(f"expected rank-3 (batch, channel, time) values, got shape {t.shape}")
    return t


class _TapeRecord:
    __slots__ = ("inputs", "output", "grad_fn")

    def __init__(self, inputs, output, grad_fn):
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn


class GradTape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; ops executed inside record themselves. Nested
    tapes are allowed, the innermost one records.
    """

    def __init__(self):
        self._records: list[_TapeRecord] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self._records)


_TAPE_STACK: list[GradTape] = []


def active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(
    inputs: tuple[Tensor, ...],
    output: Tensor,
    grad_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
) -> Tensor:
    """Record one executed op on the active tape (no-op when none is active).

    ``grad_fn`` maps the adjoint of ``output`` to one adjoint per input
    (``None`` marks an input that needs no gradient).
    """
    tape = active_tape()
    if tape is not None:
        tape._records.append(_TapeRecord(inputs, output, grad_fn))
    return output


def backward(
    tape: GradTape,
    loss: Tensor,
    params: Sequence[Tensor] | None = None,
):
    """Replay ``tape`` in reverse from scalar ``loss`` and accumulate adjoints.

    With ``params``, returns one gradient array per entry, exact zeros for
    parameters that do not influence the loss. Without, returns a dict mapping
    every ``requires_grad`` leaf seen on the tape to its gradient. Either way
    ``.grad`` is set on the ``requires_grad`` tensors covered by the result,
    replacing any value from an earlier call.
    """
    if loss.data.shape != ():
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    produced = {id(rec.output) for rec in tape._records}
    if id(loss) not in produced:
        raise ValueError("loss was not produced by an operation recorded on this tape")

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape._records):
        out_adj = adjoints.pop(id(rec.output), None)
        if out_adj is None:
            continue
        in_adjs = rec.grad_fn(out_adj)
        for tin, g in zip(rec.inputs, in_adjs):
            if g is None:
                continue
            key = id(tin)
            if key in adjoints:
                adjoints[key] += g
            else:
                adjoints[key] = np.array(g)  # own the buffer before accumulating
            if id(tin) not in produced and tin.requires_grad:
                leaves[key] = tin

    if params is not None:
        grads = []
        for p in params:
            g = adjoints.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            grads.append(g)
            if p.requires_grad:
                p.grad = g
        return grads

    result = {}
    for key, leaf in leaves.items():
        leaf.grad = adjoints[key]
        result[leaf] = adjoints[key]
    return result


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    out = Tensor._wrap(a.data + b.data, "add")
    return record_op((a, b), out, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    out = Tensor._wrap(a.data - b.data, "sub")
    return record_op((a, b), out, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    out = Tensor._wrap(a.data * b.data, "mul")
    ad, bd = a.data, b.data
    return record_op((a, b), out, lambda g: (g * bd, g * ad))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor._wrap(y, "tanh")
    return record_op((x,), out, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # Sign-split form stays finite for large |x|.
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor._wrap(y, "sigmoid")
    return record_op((x,), out, lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor._wrap(np.where(mask, x.data, 0.0), "relu")
    return record_op((x,), out, lambda g: (g * mask,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name: add/sub/mul (binary), tanh/sigmoid/relu (unary)."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} requires two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} takes a single operand")
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


def scale(x: Tensor, factor: float) -> Tensor:
    c = float(factor)
    out = Tensor._wrap(x.data * c, "scale")
    return record_op((x,), out, lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.asarray(x.data.sum()), "sum_all")
    shape = x.data.shape
    return record_op((x,), out, lambda g: (np.ones(shape) * g,))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor._wrap(np.asarray(x.data.mean()), "mean_all")
    shape = x.data.shape
    return record_op((x,), out, lambda g: (np.ones(shape) * (g / n),))


def split_channels(x: Tensor, groups: int) -> list[Tensor]:
    """Split a rank-3 tensor into ``groups`` equal channel slices, in order."""
    if x.ndim != 3:
        raise ValueError(f"split_channels expects rank-3 input, got shape {x.shape}")
    if groups < 1:
        raise ValueError(f"group count must be >= 1, got {groups}")
    c = x.channels
    if c % groups != 0:
        raise ValueError(f"channel count {c} is not divisible into {groups} groups")
    width = c // groups
    parts = []
    full_shape = x.data.shape
    for i in range(groups):
        lo, hi = i * width, (i + 1) * width
        piece = np.ascontiguousarray(x.data[:, lo:hi, :])
        out = Tensor._wrap(piece, "split_channels")

        def grad_fn(g: np.ndarray, lo: int = lo, hi: int = hi):
            full = np.zeros(full_shape)
            full[:, lo:hi, :] = g
            return (full,)

        parts.append(record_op((x,), out, grad_fn))
    return parts


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-3 tensors along the channel axis; inverse of split_channels."""
    if not parts:
        raise ValueError("concat_channels requires at least one part")
    first = parts[0]
    for p in parts[1:]:
        if p.ndim != 3 or first.ndim != 3:
            raise ValueError("concat_channels expects rank-3 parts")
        if p.batch != first.batch or p.time != first.time:
            raise ValueError(
                f"concat_channels: batch/time mismatch {first.shape} vs {p.shape}"
            )
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=1), "concat_channels")
    widths = [p.channels for p in parts]

    def grad_fn(g: np.ndarray):
        grads, lo = [], 0
        for w in widths:
            grads.append(np.ascontiguousarray(g[:, lo : lo + w, :]))
            lo += w
        return tuple(grads)

    return record_op(tuple(parts), out, grad_fn)


def time_slice(x: Tensor, index: int) -> Tensor:
    """Extract timestep ``index`` of a rank-3 tensor as a (batch, channel) tensor."""
    if x.ndim != 3:
        raise ValueError(f"time_slice expects rank-3 input, got shape {x.shape}")
    if not 0 <= index < x.time:
        raise ValueError(f"time index {index} out of range for length {x.time}")
    out = Tensor._wrap(np.ascontiguousarray(x.data[:, :, index]), "time_slice")
    full_shape = x.data.shape

    def grad_fn(g: np.ndarray):
        full = np.zeros(full_shape)
        full[:, :, index] = g
        return (full,)

    return record_op((x,), out, grad_fn)


def stack_time(steps: Sequence[Tensor]) -> Tensor:
    """Stack (batch, channel) tensors into a rank-3 tensor along a new time axis."""
    if not steps:
        raise ValueError("stack_time requires at least one step")
    shape0 = steps[0].data.shape
    for s in steps[1:]:
        if s.data.shape != shape0:
            raise ValueError(f"stack_time: step shape mismatch {shape0} vs {s.data.shape}")
    out = Tensor._wrap(np.stack([s.data for s in steps], axis=2), "stack_time")

    def grad_fn(g: np.ndarray):
        return tuple(np.ascontiguousarray(g[:, :, i]) for i in range(len(steps)))

    return record_op(tuple(steps), out, grad_fn)
