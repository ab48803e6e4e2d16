"""
Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every op appends a node to the calling thread's Tape when any input requires a
gradient. Nodes are appended in creation order, so the tape is always in
topological order and `backward` can walk it in reverse. Vectors are stored as
(n, 1) columns or (1, n) rows; nothing above two dimensions exists here.
"""
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from hilat import config
from hilat.errors import (
    DegenerateMaskError,
    DomainError,
    IndexOutOfRangeError,
    NonFiniteError,
    ShapeError,
    UsageError,
)

DTYPE = np.float64

_check_finite = config.CHECK_FINITE
_state = threading.local()
# Leaf gradient accumulation is the only cross-tape write
_grad_lock = threading.Lock()


def set_check_finite(enabled: bool) -> None:
    """Toggle NaN/Inf checks at op boundaries."""
    global _check_finite
    _check_finite = bool(enabled)


def tanh_derivative(y: np.ndarray) -> np.ndarray:
    return 1.0 - y * y


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: Optional[int] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


TensorLike = Union[Tensor, float, int, np.ndarray]


# ============================================================================
# Tape
# ============================================================================

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations for one worker."""

    def __init__(self):
        self.nodes: List[Tuple[Tensor, Tuple[Tensor, ...], BackwardFn]] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> None:
        out.node_id = len(self.nodes)
        self.nodes.append((out, parents, backward_fn))

    def reset(self) -> None:
        for out, _, _ in self.nodes:
            out.node_id = None
        self.nodes = []

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node_id is None:
            self.reset()
            return
        if loss.node_id >= len(self.nodes) or self.nodes[loss.node_id][0] is not loss:
            raise UsageError("loss was not recorded on this thread's tape")

        grads = {id(loss): np.ones((1, 1), dtype=DTYPE)}
        leaf_grads: dict = {}
        leaves: dict = {}
        for out, parents, backward_fn in reversed(self.nodes[: loss.node_id + 1]):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                target = grads if parent.node_id is not None else leaf_grads
                key = id(parent)
                if key in target:
                    target[key] = target[key] + pg
                else:
                    target[key] = pg
                if parent.node_id is None:
                    leaves[key] = parent

        with _grad_lock:
            for key, g in leaf_grads.items():
                leaf = leaves[key]
                if _check_finite and not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient for {leaf!r}")
                leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        self.reset()


def current_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = Tape()
        _state.tape = tape
    return tape


def reset_tape() -> None:
    current_tape().reset()


def backward(loss: Tensor) -> None:
    """Populate .grad on every requiring-grad leaf that `loss` depends on."""
    current_tape().backward(loss)


@contextmanager
def no_grad():
    previous = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = previous


# ============================================================================
# Op plumbing
# ============================================================================

def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr: np.ndarray, op: str) -> None:
    if _check_finite and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    _check(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.node_id = None
    out.requires_grad = any(p.requires_grad for p in parents) and not getattr(_state, "no_grad", False)
    if out.requires_grad:
        current_tape().record(out, parents, backward_fn)
    return out


def _broadcast_shape(a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    shape = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            shape.append(da)
        elif da == 1:
            shape.append(db)
        else:
            raise ShapeError(f"shapes {a} and {b} do not broadcast")
    return tuple(shape)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ============================================================================
# Linear algebra
# ============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


# ============================================================================
# Elementwise
# ============================================================================

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward_fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward_fn, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def affine(a: Tensor, factor: float, shift: float) -> Tensor:
    """factor * a + shift."""
    return _make(a.data * factor + shift, (a,), lambda g: (g * factor,), "affine")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    # Global lookup at call time so the derivative can be swapped for harness checks
    return _make(y, (a,), lambda g: (g * tanh_derivative(y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: tanh, sigmoid, log, add, mul, scale."""
    ops = {"tanh": tanh, "sigmoid": sigmoid, "log": log, "add": add, "mul": mul, "scale": scale}
    if op not in ops:
        raise UsageError(f"unknown elementwise op {op!r}")
    return ops[op](*args, **kwargs)


# ============================================================================
# Softmax
# ============================================================================

def softmax_rows(m: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax; masked-out (False) entries are exactly 0."""
    x = m.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask.reshape(1, -1)
        try:
            mask = np.broadcast_to(mask, x.shape)
        except ValueError:
            raise ShapeError(f"mask shape {mask.shape} does not fit scores {x.shape}")
        if not np.all(mask.any(axis=1)):
            raise DegenerateMaskError("softmax row has every entry masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (m,), backward_fn, "softmax_rows")


# ============================================================================
# Indexing and reshaping
# ============================================================================

def column(a: Tensor, j: int) -> Tensor:
    rows, cols = a.shape
    if not 0 <= j < cols:
        raise IndexOutOfRangeError(f"column {j} out of range for shape {a.shape}")

    def backward_fn(g):
        full = np.zeros((rows, cols), dtype=DTYPE)
        full[:, j] = g[:, 0]
        return (full,)

    return _make(a.data[:, j : j + 1].copy(), (a,), backward_fn, "column")


def select_columns(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather columns (repeats allowed); the gradient scatter-adds back."""
    rows, cols = a.shape
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cols):
        raise IndexOutOfRangeError(f"column index out of range for shape {a.shape}")

    def backward_fn(g):
        full = np.zeros((rows, cols), dtype=DTYPE)
        np.add.at(full.T, idx, g.T)
        return (full,)

    return _make(a.data[:, idx], (a,), backward_fn, "select_columns")


def element(a: Tensor, i: int, j: int) -> Tensor:
    rows, cols = a.shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise IndexOutOfRangeError(f"element ({i}, {j}) out of range for shape {a.shape}")

    def backward_fn(g):
        full = np.zeros((rows, cols), dtype=DTYPE)
        full[i, j] = g[0, 0]
        return (full,)

    return _make(a.data[i : i + 1, j : j + 1].copy(), (a,), backward_fn, "element")


def hstack(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("hstack of nothing")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError(f"hstack row counts differ: {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def backward_fn(g):
        return [g[:, bounds[k] : bounds[k + 1]] for k in range(len(parts))]

    return _make(np.hstack([p.data for p in parts]), tuple(parts), backward_fn, "hstack")


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather table rows; the gradient scatter-adds back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexOutOfRangeError(f"row id out of range for table with {n_rows} rows")

    def backward_fn(g):
        full = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(full, ids, g)
        return (full,)

    return _make(table.data[ids], (table,), backward_fn, "take_rows")


def flatten_columns(a: Tensor) -> Tensor:
    """Stack the columns of a (m x n) into one (m*n x 1) column."""
    rows, cols = a.shape
    return _make(
        a.data.T.reshape(-1, 1).copy(),
        (a,),
        lambda g: (g.reshape(cols, rows).T,),
        "flatten_columns",
    )


# ============================================================================
# Reductions
# ============================================================================

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(a.data.sum().reshape(1, 1), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def col_sum(a: Tensor) -> Tensor:
    """Sum over rows: (m x n) -> (1 x n)."""
    shape = a.shape
    return _make(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "col_sum")


def row_mean(a: Tensor) -> Tensor:
    """Mean over columns: (m x n) -> (m x 1)."""
    rows, cols = a.shape
    return _make(
        a.data.mean(axis=1, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / cols, (rows, cols)).copy(),),
        "row_mean",
    )


def row_max(a: Tensor) -> Tensor:
    """Max over columns: (m x n) -> (m x 1); gradient goes to the first argmax."""
    rows, cols = a.shape
    idx = a.data.argmax(axis=1)

    def backward_fn(g):
        full = np.zeros((rows, cols), dtype=DTYPE)
        full[np.arange(rows), idx] = g[:, 0]
        return (full,)

    return _make(a.data[np.arange(rows), idx].reshape(-1, 1), (a,), backward_fn, "row_max")
