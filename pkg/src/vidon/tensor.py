"""Dense float64 tensors with a minimal reverse-mode gradient tape.

The tape is define-by-run: ops record themselves on the thread-local active
tape whenever an operand is traced, and the node list is topologically
ordered by construction. Tensors are immutable values; optimizers build new
ones instead of mutating in place.
"""

from __future__ import annotations

import ctypes
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np


def _tune_malloc() -> None:
    # Large work arrays churn every step; keeping them on the heap free list
    # instead of mmap round-trips avoids re-faulting pages each allocation.
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-4, 0)          # M_MMAP_MAX = 0
        libc.mallopt(-1, 1 << 30)    # M_TRIM_THRESHOLD: never return to the OS
    except Exception:
        pass


_tune_malloc()

__all__ = [
    "Tensor",
    "GradientTape",
    "DimensionError",
    "TapeError",
    "matmul",
    "affine",
    "add",
    "sub",
    "mul",
    "scale",
    "tanh",
    "relu",
    "exp",
    "softmax_scaled",
    "segment_softmax_scaled",
    "segment_sum",
    "segment_repeat",
    "tsum",
    "tmean",
    "concat",
    "slice_rows",
    "slice_cols",
    "transpose",
    "reshape",
    "backward",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape."""


_tls = threading.local()


def _active_tape() -> "GradientTape | None":
    return getattr(_tls, "tape", None)


def _as_array(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


class Tensor:
    """Immutable float64 array, optionally attached to a gradient tape."""

    __slots__ = ("array", "node", "tape_id")

    def __init__(self, values, _node: "_Node | None" = None, _tape_id: int | None = None):
        self.array = _as_array(values)
        self.node = _node
        self.tape_id = _tape_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def traced(self) -> bool:
        return self.tape_id is not None

    def item(self) -> float:
        return float(self.array)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, traced={self.traced})"


class _Node:
    """One recorded operation: parent tensors plus a backward rule.

    backward(grad_out) returns one gradient array per parent (None for
    untraced parents).
    """

    __slots__ = ("parents", "backward")

    def __init__(self, parents: tuple[Tensor, ...], backward: Callable):
        self.parents = parents
        self.backward = backward


class GradientTape:
    """Single-threaded record of traced operations, consumed by backward()."""

    _counter = 0
    _counter_lock = threading.Lock()

    def __init__(self):
        with GradientTape._counter_lock:
            GradientTape._counter += 1
            self.tape_id = GradientTape._counter
        self.nodes: list[Tensor] = []
        self.leaves: list[Tensor] = []
        self.consumed = False
        self._prev = None

    def __enter__(self) -> "GradientTape":
        self._prev = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = self._prev

    def watch(self, t: Tensor) -> Tensor:
        """Mark a tensor as a trainable leaf of this tape."""
        if t.tape_id == self.tape_id:
            return t
        if t.node is not None:
            raise TapeError("cannot watch a non-leaf tensor")
        t.tape_id = self.tape_id
        self.leaves.append(t)
        return t

    def _record(self, out: np.ndarray, parents: tuple[Tensor, ...], bw: Callable) -> Tensor:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        t = Tensor(out, _node=_Node(parents, bw), _tape_id=self.tape_id)
        self.nodes.append(t)
        return t


def _maybe_record(out: np.ndarray, parents: tuple[Tensor, ...], bw: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.tape_id == tape.tape_id for p in parents):
        return tape._record(out, parents, bw)
    return Tensor(out)


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of a scalar loss for every watched leaf.

    Consumes the active tape; returns a map leaf -> gradient tensor of the
    leaf's shape.
    """
    tape = _active_tape()
    if tape is None:
        raise TapeError("no active gradient tape")
    if loss.tape_id != tape.tape_id or loss.node is None:
        raise TapeError("loss was not produced on the active tape")
    if loss.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.array)}
    for t in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        if g is None or t.node is None:
            continue
        parent_grads = t.node.backward(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or p.tape_id != tape.tape_id:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = pg
            else:
                acc += pg

    tape.consumed = True
    result: dict[Tensor, Tensor] = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.array)
        result[leaf] = Tensor(g)
    return result


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.array @ b.array
    a_needed, b_needed = a.traced, b.traced

    def bw(g):
        return (g @ b.array.T if a_needed else None,
                a.array.T @ g if b_needed else None)

    return _maybe_record(out, (a, b), bw)


def affine(x: Tensor, w: Tensor, b: Tensor, activation: str | None = None) -> Tensor:
    """Fused x @ w.T + b for a layer with weight (out x in) and bias (out,).

    An optional tanh/relu applied in place on the result keeps one tape node
    and one output buffer per layer.
    """
    if x.array.ndim != 2 or w.array.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"affine shape mismatch: {x.shape} x {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"bias shape {b.shape} != ({w.shape[0]},)")
    out = x.array @ w.array.T
    out += b.array
    if activation == "tanh":
        np.tanh(out, out=out)
    elif activation == "relu":
        np.maximum(out, 0.0, out=out)
    elif activation is not None:
        raise ValueError(f"unknown activation {activation!r}")
    x_needed = x.traced

    def bw(g):
        if activation == "tanh":
            g = g * (1.0 - out * out)
        elif activation == "relu":
            g = g * (out > 0.0)
        return (g @ w.array if x_needed else None), g.T @ x.array, g.sum(axis=0)

    return _maybe_record(out, (x, w, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may be a vector broadcast over the rows of a."""
    if a.shape == b.shape:
        def bw(g):
            # distinct objects: accumulation mutates gradient buffers in place
            return g, g.copy()
    elif a.array.ndim == 2 and b.shape == (a.shape[1],):
        def bw(g):
            return g, g.sum(axis=0)
    else:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _maybe_record(a.array + b.array, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def bw(g):
        return g, -g

    return _maybe_record(a.array - b.array, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; b may be a column (m, 1) broadcast across columns."""
    if a.shape == b.shape:
        def bw(g):
            return g * b.array, g * a.array
    elif a.array.ndim == 2 and b.shape == (a.shape[0], 1):
        def bw(g):
            return g * b.array, (g * a.array).sum(axis=1, keepdims=True)
    else:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    return _maybe_record(a.array * b.array, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        return (g * c,)

    return _maybe_record(a.array * c, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.array)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _maybe_record(out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.array, 0.0)

    def bw(g):
        return (g * (a.array > 0.0),)

    return _maybe_record(out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.array)

    def bw(g):
        return (g * out,)

    return _maybe_record(out, (a,), bw)


def softmax_scaled(z: Tensor, scale_const: float) -> Tensor:
    """Weights w_j = exp(z_j / s) / sum_k exp(z_k / s), computed stably.

    The maximum logit is subtracted before exponentiation, so arbitrarily
    large logits cannot overflow; one final division renormalizes.
    """
    if z.size == 0:
        raise DimensionError("softmax_scaled requires a non-empty input")
    if z.array.ndim != 1:
        raise DimensionError(f"softmax_scaled expects a 1-d tensor, got {z.shape}")
    s = float(scale_const)
    if s <= 0.0:
        raise ValueError(f"softmax scale must be positive, got {s}")
    shifted = (z.array - z.array.max()) / s
    e = np.exp(shifted)
    w = e / e.sum()

    def bw(g):
        return ((w / s) * (g - float(g @ w)),)

    return _maybe_record(w, (z,), bw)


def _check_bounds(bounds: np.ndarray, n_rows: int) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=np.int64)
    if bounds.ndim != 1 or bounds.size < 2 or bounds[0] != 0 or bounds[-1] != n_rows:
        raise DimensionError("segment bounds must run from 0 to the row count")
    if np.any(np.diff(bounds) <= 0):
        raise DimensionError("segments must be non-empty")
    return bounds


def segment_softmax_scaled(z: Tensor, bounds, scale_const: float) -> Tensor:
    """Per-segment softmax_scaled over the rows of a column tensor (m, 1)."""
    if z.array.ndim != 2 or z.shape[1] != 1:
        raise DimensionError(f"segment softmax expects (m, 1), got {z.shape}")
    bounds = _check_bounds(bounds, z.shape[0])
    s = float(scale_const)
    starts = bounds[:-1]
    lengths = np.diff(bounds)
    flat = z.array[:, 0]
    seg_max = np.maximum.reduceat(flat, starts)
    e = np.exp((flat - np.repeat(seg_max, lengths)) / s)
    denom = np.add.reduceat(e, starts)
    w = e / np.repeat(denom, lengths)

    def bw(g):
        gf = g[:, 0]
        dot = np.add.reduceat(gf * w, starts)
        return (((w / s) * (gf - np.repeat(dot, lengths)))[:, None],)

    return _maybe_record(w[:, None], (z,), bw)


def segment_sum(x: Tensor, bounds) -> Tensor:
    """Sum rows within each segment: (m, k) -> (n_segments, k)."""
    if x.array.ndim != 2:
        raise DimensionError(f"segment_sum expects a 2-d tensor, got {x.shape}")
    bounds = _check_bounds(bounds, x.shape[0])
    lengths = np.diff(bounds)
    out = np.add.reduceat(x.array, bounds[:-1], axis=0)

    def bw(g):
        return (np.repeat(g, lengths, axis=0),)

    return _maybe_record(out, (x,), bw)


def segment_repeat(x: Tensor, bounds) -> Tensor:
    """Repeat row i of x across segment i: (n_segments, k) -> (m, k)."""
    if x.array.ndim != 2:
        raise DimensionError(f"segment_repeat expects a 2-d tensor, got {x.shape}")
    bounds = np.asarray(bounds, dtype=np.int64)
    lengths = np.diff(bounds)
    if lengths.size != x.shape[0] or np.any(lengths <= 0):
        raise DimensionError("segment count must match the row count")
    out = np.repeat(x.array, lengths, axis=0)

    def bw(g):
        return (np.add.reduceat(g, bounds[:-1], axis=0),)

    return _maybe_record(out, (x,), bw)


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum of all entries (scalar) or over axis 1 keeping a column shape."""
    if axis is None:
        out = x.array.sum()

        def bw(g):
            return (np.broadcast_to(g, x.shape).copy(),)
    elif axis == 1 and x.array.ndim == 2:
        out = x.array.sum(axis=1, keepdims=True)

        def bw(g):
            return (np.broadcast_to(g, x.shape).copy(),)
    else:
        raise DimensionError(f"unsupported sum axis {axis} for shape {x.shape}")
    return _maybe_record(np.asarray(out), (x,), bw)


def tmean(x: Tensor) -> Tensor:
    n = x.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    out = x.array.mean()

    def bw(g):
        return (np.full(x.shape, float(g) / n),)

    return _maybe_record(np.asarray(out), (x,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of zero tensors")
    if axis not in (0, 1):
        raise DimensionError(f"unsupported concat axis {axis}")
    arrays = [p.array for p in parts]
    out = np.concatenate(arrays, axis=axis)
    offsets = np.cumsum([0] + [a.shape[axis] for a in arrays])

    def bw(g):
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _maybe_record(out, tuple(parts), bw)


def slice_rows(x: Tensor, i0: int, i1: int) -> Tensor:
    if x.array.ndim != 2 or not (0 <= i0 < i1 <= x.shape[0]):
        raise DimensionError(f"bad row slice [{i0}:{i1}] of {x.shape}")
    out = x.array[i0:i1].copy()

    def bw(g):
        full = np.zeros_like(x.array)
        full[i0:i1] = g
        return (full,)

    return _maybe_record(out, (x,), bw)


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    if x.array.ndim != 2 or not (0 <= j0 < j1 <= x.shape[1]):
        raise DimensionError(f"bad column slice [{j0}:{j1}] of {x.shape}")
    out = np.ascontiguousarray(x.array[:, j0:j1])

    def bw(g):
        full = np.zeros_like(x.array)
        full[:, j0:j1] = g
        return (full,)

    return _maybe_record(out, (x,), bw)


def transpose(x: Tensor) -> Tensor:
    if x.array.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d tensor, got {x.shape}")

    def bw(g):
        return (np.ascontiguousarray(g.T),)

    return _maybe_record(np.ascontiguousarray(x.array.T), (x,), bw)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")

    def bw(g):
        return (g.reshape(x.shape),)

    return _maybe_record(x.array.reshape(shape), (x,), bw)
