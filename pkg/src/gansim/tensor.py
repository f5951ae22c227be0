"""Dense f32 tensors with reverse-mode differentiation on an explicit tape.

The engine is deliberately small: a Tensor wraps a float32 ndarray, and every
primitive application is recorded on a thread-local ComputationTape when any
input requires gradients.  Backward walks the tape once in reverse.

Two properties matter for the rest of the package:

* VJP rules are written in terms of the public ops themselves, so running a
  backward pass with ``create_graph=True`` records the gradient computation
  on the tape again.  That is what makes the discriminator's input-gradient
  penalty trainable (gradients of gradients) without a second machinery.
* Non-finite values are rejected at the primitive boundary rather than left
  to propagate, naming the offending op.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Input shapes are invalid for the requested primitive."""


class NumericError(FloatingPointError):
    """A primitive produced NaN/Inf."""


class TapeError(RuntimeError):
    """Backward called on a consumed tape or an off-tape value."""


class ContractError(ValueError):
    """An operation precondition was violated."""


_ids = itertools.count()


class Tensor:
    """Dense f32 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "id", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor from op '{op}'")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.id = next(_ids)
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """Same storage, no gradient tracking."""
        return Tensor(self.data, requires_grad=False, op="detach")

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = None

    # Arithmetic sugar; the real work lives in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, ops.as_tensor(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, ops.as_tensor(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self.op}, grad={self.requires_grad})"


class Record:
    """One primitive application: inputs, output, and its VJP closure."""

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.vjp = vjp


class ComputationTape:
    """Ordered record of primitive applications for one differentiation scope."""

    def __init__(self):
        self.records: list[Record] = []
        self.consumed = False

    def append(self, rec: Record) -> None:
        if self.consumed:
            # a fresh computation starts after the previous backward
            self.consumed = False
        self.records.append(rec)

    def reset(self) -> None:
        self.records.clear()
        self.consumed = False


class _State(threading.local):
    def __init__(self):
        self.tapes = [ComputationTape()]
        self.tracking = True


_state = _State()


def active_tape() -> ComputationTape:
    return _state.tapes[-1]


def tracking_enabled() -> bool:
    return _state.tracking


class no_grad:
    """Disable recording inside the context."""

    def __enter__(self):
        self._prev = _state.tracking
        _state.tracking = False
        return self

    def __exit__(self, *exc):
        _state.tracking = self._prev
        return False


class enable_grad:
    def __enter__(self):
        self._prev = _state.tracking
        _state.tracking = True
        return self

    def __exit__(self, *exc):
        _state.tracking = self._prev
        return False


class fresh_tape:
    """Push an isolated tape; used by gradient checking and tests."""

    def __enter__(self):
        _state.tapes.append(ComputationTape())
        return _state.tapes[-1]

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp: Callable) -> Tensor:
    """Wrap a primitive result; register on the tape when gradients are live."""
    if not np.isfinite(out_data).all():
        raise NumericError(f"non-finite output of primitive '{op}'")
    track = _state.tracking and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = track
    out.grad = None
    out.id = next(_ids)
    out.op = op
    if track:
        active_tape().append(Record(op, inputs, out, vjp))
    return out


def _reverse_walk(
    tape_records: list[Record],
    seed: Tensor,
    seed_cot: Tensor,
    wrt_ids: Optional[set[int]],
    create_graph: bool,
):
    """Shared reverse sweep.  Returns {tensor id: cotangent Tensor}.

    When wrt_ids is given, only records lying on a path from a wrt tensor to
    the seed are visited, and VJPs are asked only for the inputs that need
    cotangents (skipping e.g. convolution weight gradients during an
    input-gradient pass).
    """
    from . import ops

    # Tensors that can influence the seed.
    influencers = {seed.id}
    relevant: list[Record] = []
    for rec in reversed(tape_records):
        if rec.output.id in influencers:
            relevant.append(rec)
            for t in rec.inputs:
                influencers.add(t.id)
    relevant.reverse()

    # Tensors reachable from the wrts (forward pass).
    live: Optional[set[int]] = None
    if wrt_ids is not None:
        live = set(wrt_ids)
        for rec in relevant:
            if any(t.id in live for t in rec.inputs):
                live.add(rec.output.id)

    cots: dict[int, Tensor] = {seed.id: seed_cot}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for rec in reversed(relevant):
            cot_out = cots.get(rec.output.id)
            if cot_out is None:
                continue
            needs = [
                t.requires_grad and (live is None or t.id in live)
                for t in rec.inputs
            ]
            if not any(needs):
                continue
            grads = rec.vjp(cot_out, needs)
            for t, need, g in zip(rec.inputs, needs, grads):
                if not need or g is None:
                    continue
                prev = cots.get(t.id)
                cots[t.id] = g if prev is None else ops.add(prev, g)
    return cots


def backward(loss: Tensor, params: Optional[Sequence[Tensor]] = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad for every reachable leaf.

    With ``params`` given, only those leaves receive gradients (cheaper: the
    walk skips cotangents that cannot reach them).  The tape is consumed
    either way: a second backward over the same records raises.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {tuple(loss.shape)}")
    tape = active_tape()
    if tape.consumed:
        raise TapeError("backward called on a consumed tape")
    if not any(rec.output.id == loss.id for rec in tape.records):
        raise TapeError("loss is not on the active tape")

    produced = {rec.output.id for rec in tape.records}
    seed = Tensor(np.ones_like(loss.data), op="seed")
    wrt_ids = None if params is None else {t.id for t in params}
    cots = _reverse_walk(tape.records, loss, seed, wrt_ids=wrt_ids, create_graph=False)

    seen: set[int] = set()
    for rec in tape.records:
        for t in rec.inputs:
            if t.requires_grad and t.id not in produced and t.id not in seen:
                if wrt_ids is not None and t.id not in wrt_ids:
                    continue
                seen.add(t.id)
                g = cots.get(t.id)
                if g is not None:
                    if t.grad is None:
                        t.grad = g.data.copy()
                    else:
                        t.grad += g.data
    tape.records.clear()
    tape.consumed = True


def grad_of(output: Tensor, wrts: Iterable[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Functional gradients of a scalar output w.r.t. given tensors.

    Does not touch .grad and does not consume the tape.  With
    ``create_graph=True`` the returned gradients are themselves recorded, so
    they can appear inside another differentiated expression.
    """
    if output.size != 1:
        raise ContractError("grad_of requires a scalar output")
    wrts = list(wrts)
    tape = active_tape()
    records = list(tape.records)
    seed = Tensor(np.ones_like(output.data), op="seed")
    cots = _reverse_walk(records, output, seed, wrt_ids={t.id for t in wrts}, create_graph=create_graph)
    out = []
    for t in wrts:
        g = cots.get(t.id)
        if g is None:
            g = Tensor(np.zeros_like(t.data), op="zero-grad")
        out.append(g)
    return out


def reset_tape() -> None:
    active_tape().reset()
