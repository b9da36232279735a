"""Reverse-mode differentiable array engine backed by numpy.

Every model in the package is expressed as a DAG of ``DiffArray`` values.
Each operation records a ``Node`` holding its inputs and a backward closure;
``backward`` walks the graph in reverse topological order and accumulates
gradients into leaf arrays (parameters).  The graph is built only while
gradient recording is enabled (see ``no_grad``).
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
import math
from dataclasses import dataclass, field
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

logger = logging.getLogger(__name__)

NUMERIC_ERROR = "NUMERIC_ERROR"


# ── Errors ──────────────────────────────────────────────────────────


class ArrayError(Exception):
    """Base class for array engine failures."""


class DimensionError(ArrayError):
    """Raised when operand shapes are incompatible."""


class InvalidMaskError(ArrayError):
    """Raised when a softmax row has every entry masked."""


class LookupRangeError(ArrayError):
    """Raised when a gather index falls outside its table."""


class ContractError(ArrayError):
    """Raised when a caller violates an operation precondition."""


class NumericFailure(ArrayError):
    """Raised when a computation produces NaN or infinite values."""


# ── Precision and recording state ───────────────────────────────────

_PRECISIONS: Dict[str, type] = {"float64": np.float64, "float32": np.float32}
_dtype: type = np.float64

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "segnet_grad_enabled", default=True
)


def set_precision(name: str) -> None:
    """Select the process-wide float width for new arrays."""
    global _dtype
    if name not in _PRECISIONS:
        raise ContractError(
            f"Unknown precision '{name}' (expected one of {sorted(_PRECISIONS)})"
        )
    _dtype = _PRECISIONS[name]


def get_precision() -> str:
    return "float64" if _dtype is np.float64 else "float32"


def get_dtype() -> type:
    return _dtype


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current context."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


# ── Core types ──────────────────────────────────────────────────────

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class Node:
    """One recorded operation: its name, inputs and gradient rule."""

    op: str
    inputs: Tuple["DiffArray", ...]
    backward: BackwardFn


class DiffArray:
    """A numeric n-d array that optionally records how it was computed."""

    __array_priority__ = 100

    def __init__(
        self,
        values: Union[np.ndarray, float, Sequence[float]],
        *,
        requires_grad: bool = False,
        node: Optional[Node] = None,
    ) -> None:
        self.values: np.ndarray = np.asarray(values, dtype=_dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    @property
    def T(self) -> "DiffArray":
        return transpose(self)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "DiffArray":
        return DiffArray(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def reshape(self, *shape: int) -> "DiffArray":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "DiffArray":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "DiffArray":
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int = -1, keepdims: bool = False) -> "DiffArray":
        return max_(self, axis=axis, keepdims=keepdims)

    def __add__(self, other: "Operand") -> "DiffArray":
        return add(self, other)

    def __radd__(self, other: "Operand") -> "DiffArray":
        return add(other, self)

    def __sub__(self, other: "Operand") -> "DiffArray":
        return sub(self, other)

    def __rsub__(self, other: "Operand") -> "DiffArray":
        return sub(other, self)

    def __mul__(self, other: "Operand") -> "DiffArray":
        return mul(self, other)

    def __rmul__(self, other: "Operand") -> "DiffArray":
        return mul(other, self)

    def __truediv__(self, other: "Operand") -> "DiffArray":
        return div(self, other)

    def __rtruediv__(self, other: "Operand") -> "DiffArray":
        return div(other, self)

    def __neg__(self) -> "DiffArray":
        return neg(self)

    def __matmul__(self, other: "DiffArray") -> "DiffArray":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "DiffArray":
        return getitem(self, index)

    def __repr__(self) -> str:
        kind = "op=" + self.node.op if self.node else "leaf"
        return f"DiffArray(shape={self.shape}, {kind})"


class Parameter(DiffArray):
    """A named leaf array owned by a model."""

    def __init__(self, name: str, values: np.ndarray, trainable: bool = True) -> None:
        super().__init__(np.array(values, dtype=_dtype), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


Operand = Union[DiffArray, float, int, np.ndarray]


def as_array(value: Operand) -> DiffArray:
    if isinstance(value, DiffArray):
        return value
    return DiffArray(value)


def _record(
    values: np.ndarray,
    op: str,
    inputs: Sequence[DiffArray],
    backward: BackwardFn,
) -> DiffArray:
    out = DiffArray(values)
    if _grad_enabled.get() and any(item.tracked for item in inputs):
        out.node = Node(op, tuple(inputs), backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1
    )
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ── Backward pass ───────────────────────────────────────────────────


def _topological_order(root: DiffArray) -> List[DiffArray]:
    order: List[DiffArray] = []
    seen: set[int] = set()
    stack: List[Tuple[DiffArray, bool]] = [(root, False)]
    while stack:
        arr, expanded = stack.pop()
        if expanded:
            order.append(arr)
            continue
        if id(arr) in seen:
            continue
        seen.add(id(arr))
        stack.append((arr, True))
        if arr.node is not None:
            for item in arr.node.inputs:
                if item.tracked and id(item) not in seen:
                    stack.append((item, False))
    return order


def backward(loss: DiffArray) -> None:
    """Accumulate d(loss)/d(leaf) into every recording leaf's ``grad``.

    Raises:
        ContractError: If ``loss`` is not a single value.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for arr in reversed(order):
        grad = grads.pop(id(arr), None)
        if grad is None:
            continue
        if arr.node is None:
            if arr.requires_grad:
                grad = np.array(grad, dtype=arr.values.dtype)
                arr.grad = grad if arr.grad is None else arr.grad + grad
            continue
        for item, item_grad in zip(arr.node.inputs, arr.node.backward(grad)):
            if item_grad is None or not item.tracked:
                continue
            key = id(item)
            grads[key] = grads[key] + item_grad if key in grads else item_grad


# ── Elementwise arithmetic ──────────────────────────────────────────


def add(a: Operand, b: Operand) -> DiffArray:
    a, b = as_array(a), as_array(b)
    return _record(
        a.values + b.values,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> DiffArray:
    a, b = as_array(a), as_array(b)
    return _record(
        a.values - b.values,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> DiffArray:
    a, b = as_array(a), as_array(b)
    return _record(
        a.values * b.values,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        ),
    )


def div(a: Operand, b: Operand) -> DiffArray:
    a, b = as_array(a), as_array(b)
    return _record(
        a.values / b.values,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        ),
    )


def neg(a: DiffArray) -> DiffArray:
    return _record(-a.values, "neg", (a,), lambda g: (-g,))


def exp(a: DiffArray) -> DiffArray:
    out = np.exp(a.values)
    return _record(out, "exp", (a,), lambda g: (g * out,))


def log(a: DiffArray) -> DiffArray:
    return _record(np.log(a.values), "log", (a,), lambda g: (g / a.values,))


def sigmoid(a: DiffArray) -> DiffArray:
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _record(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: DiffArray) -> DiffArray:
    out = np.tanh(a.values)
    return _record(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: DiffArray) -> DiffArray:
    active = a.values > 0
    return _record(a.values * active, "relu", (a,), lambda g: (g * active,))


def clamp(a: DiffArray, low: float, high: float) -> DiffArray:
    """Clip to [low, high]; gradient flows only where no clipping happened."""
    inside = (a.values >= low) & (a.values <= high)
    return _record(
        np.clip(a.values, low, high), "clamp", (a,), lambda g: (g * inside,)
    )


def where(mask: np.ndarray, a: DiffArray, fill: float) -> DiffArray:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _record(
        np.where(mask, a.values, fill), "where", (a,), lambda g: (g * mask,)
    )


def dropout(
    a: DiffArray, rate: float, rng: np.random.Generator, training: bool
) -> DiffArray:
    """Inverted dropout; the identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)


# ── Shape manipulation ──────────────────────────────────────────────


def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _record(
        a.values @ b.values,
        "matmul",
        (a, b),
        lambda g: (g @ b.values.T, a.values.T @ g),
    )


def transpose(a: DiffArray) -> DiffArray:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _record(a.values.T, "transpose", (a,), lambda g: (g.T,))


def reshape(a: DiffArray, shape: Sequence[int]) -> DiffArray:
    try:
        out = a.values.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc
    return _record(out, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: DiffArray, index: object) -> DiffArray:
    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)  # type: ignore[arg-type]
        return (full,)

    return _record(a.values[index], "getitem", (a,), _backward)  # type: ignore[index]


def concat(arrays: Sequence[DiffArray], axis: int = 0) -> DiffArray:
    if not arrays:
        raise ContractError("concat needs at least one array")
    arrays = tuple(as_array(item) for item in arrays)
    try:
        out = np.concatenate([item.values for item in arrays], axis=axis)
    except ValueError as exc:
        shapes = [item.shape for item in arrays]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([item.shape[axis] for item in arrays])[:-1]

    return _record(
        out, "concat", arrays, lambda g: tuple(np.split(g, bounds, axis=axis))
    )


def stack_rows(rows: Sequence[DiffArray]) -> DiffArray:
    """Stack 1-d arrays (or [1 x d] rows) into a matrix."""
    return concat([row.reshape(1, -1) if row.ndim == 1 else row for row in rows], 0)


# ── Reductions ──────────────────────────────────────────────────────


def sum_(a: DiffArray, axis: Optional[int] = None, keepdims: bool = False) -> DiffArray:
    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record(a.values.sum(axis=axis, keepdims=keepdims), "sum", (a,), _backward)


def mean(a: DiffArray, axis: Optional[int] = None, keepdims: bool = False) -> DiffArray:
    count = a.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def max_(a: DiffArray, axis: int = -1, keepdims: bool = False) -> DiffArray:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    top = a.values.max(axis=axis, keepdims=True)
    hits = a.values == top
    first = hits & (np.cumsum(hits, axis=axis) == 1)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * first,)

    out = top if keepdims else np.squeeze(top, axis=axis)
    return _record(out, "max", (a,), _backward)


# ── Normalisation ───────────────────────────────────────────────────


def softmax_rows(scores: DiffArray, mask: Optional[np.ndarray] = None) -> DiffArray:
    """Softmax over the last axis.

    Args:
        scores: Real-valued scores.
        mask: Optional boolean array broadcastable to ``scores``; ``False``
            entries receive exactly zero probability.

    Raises:
        InvalidMaskError: If some row has every entry masked.
        NumericFailure: If an unmasked score is NaN or infinite.
    """
    v = scores.values
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not mask.any(axis=-1).all():
            raise InvalidMaskError("softmax: every entry of a row is masked")
        finite = np.isfinite(v) | ~mask
        v = np.where(mask, v, -np.inf)
    else:
        finite = np.isfinite(v)
    if not finite.all():
        raise NumericFailure("softmax: non-finite score")
    shifted = np.exp(v - v.max(axis=-1, keepdims=True))
    probs = shifted / shifted.sum(axis=-1, keepdims=True)

    return _record(
        probs,
        "softmax",
        (scores,),
        lambda g: (probs * (g - (g * probs).sum(axis=-1, keepdims=True)),),
    )


def layer_norm(
    x: DiffArray, gamma: DiffArray, beta: DiffArray, eps: float = 1e-5
) -> DiffArray:
    """Normalise the last axis to zero mean and unit variance, then scale."""
    width = x.shape[-1]
    centred = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gamma.values
        dx = (inv_std / width) * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(
        gamma.values * xhat + beta.values, "layer_norm", (x, gamma, beta), _backward
    )


def batch_norm(
    x: DiffArray,
    gamma: DiffArray,
    beta: DiffArray,
    running_mean: Parameter,
    running_var: Parameter,
    *,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> DiffArray:
    """Batch normalisation over the rows of ``x`` ([batch x features]).

    In training mode with at least two rows the batch statistics are used
    and the running estimates move by ``momentum``.  Otherwise the running
    estimates are used as constants.
    """
    rows = x.shape[0]
    if not training or rows < 2:
        scale = gamma * (1.0 / np.sqrt(running_var.values + eps))
        return (x - running_mean.values) * scale + beta

    mu = x.values.mean(axis=0)
    centred = x.values - mu
    var = (centred * centred).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    running_mean.values[...] = (1.0 - momentum) * running_mean.values + momentum * mu
    running_var.values[...] = (1.0 - momentum) * running_var.values + momentum * (
        var * rows / (rows - 1)
    )

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gamma.values
        dx = (inv_std / rows) * (
            rows * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(
        gamma.values * xhat + beta.values, "batch_norm", (x, gamma, beta), _backward
    )


# ── Layers expressed as single ops ──────────────────────────────────


def linear(x: DiffArray, weight: DiffArray, bias: Optional[DiffArray] = None) -> DiffArray:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def maxout(
    x: DiffArray, weight: DiffArray, bias: DiffArray, pieces: int
) -> DiffArray:
    """Maxout unit: the max over ``pieces`` affine maps of the input."""
    width = weight.shape[1]
    if width % pieces:
        raise DimensionError(
            f"maxout: weight width {width} is not a multiple of {pieces} pieces"
        )
    z = linear(x, weight, bias)
    return max_(z.reshape(x.shape[0], width // pieces, pieces), axis=-1)


def conv1d(x: DiffArray, weight: DiffArray, bias: DiffArray) -> DiffArray:
    """Valid 1-d convolution of ``x`` [n x T x C] with ``weight`` [w x C x F]."""
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise DimensionError(f"conv1d: cannot convolve {x.shape} with {weight.shape}")
    width = weight.shape[0]
    steps = x.shape[1] - width + 1
    if steps < 1:
        raise DimensionError(
            f"conv1d: sequence length {x.shape[1]} shorter than filter width {width}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x.values, width, axis=1)
    out = np.einsum("ntcw,wcf->ntf", windows, weight.values) + bias.values

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx = np.zeros_like(x.values)
        for k in range(width):
            dx[:, k : k + steps, :] += g @ weight.values[k].T
        dw = np.einsum("ntcw,ntf->wcf", windows, g)
        return dx, dw, g.sum(axis=(0, 1))

    return _record(out, "conv1d", (x, weight, bias), _backward)


def embedding(table: DiffArray, ids: np.ndarray) -> DiffArray:
    """Gather rows of ``table``; the output has shape ``ids.shape + [d]``."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        bad = int(ids.max()) if ids.max() >= rows else int(ids.min())
        raise LookupRangeError(f"id {bad} outside table of {rows} rows")

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(table.values)
        np.add.at(full, ids, g)
        return (full,)

    return _record(table.values[ids], "embedding", (table,), _backward)


def take_columns(x: DiffArray, index: np.ndarray) -> DiffArray:
    """``out[i, j] = x[i, index[i, j]]`` for a matrix ``x``."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim == 1:
        index = np.broadcast_to(index, (x.shape[0], index.size))
    rows = np.broadcast_to(np.arange(x.shape[0])[:, None], index.shape)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(x.values)
        np.add.at(full, (rows, index), g)
        return (full,)

    return _record(x.values[rows, index], "take_columns", (x,), _backward)


def scatter_columns(x: DiffArray, index: np.ndarray, width: int) -> DiffArray:
    """``out[i, index[i, j]] += x[i, j]``; the dual of ``take_columns``."""
    index = np.broadcast_to(np.asarray(index, dtype=np.int64), x.shape)
    if index.size and (index.min() < 0 or index.max() >= width):
        raise LookupRangeError(f"scatter index outside width {width}")
    rows = np.broadcast_to(np.arange(x.shape[0])[:, None], x.shape)
    out = np.zeros((x.shape[0], width), dtype=x.values.dtype)
    np.add.at(out, (rows, index), x.values)
    return _record(out, "scatter_columns", (x,), lambda g: (g[rows, index],))


def exclusive_logcumsumexp(x: DiffArray) -> DiffArray:
    """Row ``i`` holds ``log sum_{r<i} exp(x[r])`` column-wise; row 0 holds 0."""
    if x.ndim != 2:
        raise DimensionError(f"exclusive_logcumsumexp expects a matrix, got {x.shape}")
    inclusive = np.logaddexp.accumulate(x.values, axis=0)
    out = np.zeros_like(x.values)
    out[1:] = inclusive[:-1]
    steps = x.shape[0]
    earlier = np.tril(np.ones((steps, steps), dtype=bool), k=-1)[:, :, None]

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        diff = np.where(earlier, x.values[None, :, :] - out[:, None, :], -np.inf)
        return ((g[:, None, :] * np.exp(diff)).sum(axis=0),)

    return _record(out, "exclusive_logcumsumexp", (x,), _backward)


# ── Initialisation ──────────────────────────────────────────────────


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    if len(shape) == 3:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def normal_init(
    rng: np.random.Generator, shape: Tuple[int, ...], std: float = 0.02
) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


# ── Modules ─────────────────────────────────────────────────────────


class Module:
    """Owner of named parameters and child modules.

    Parameter names are dotted paths built from the module names, so they
    stay unique and stable across save/load.
    """

    def __init__(self, name: str = "") -> None:
        self.name = name
        self.training = True
        self._parameters: Dict[str, Parameter] = {}
        self._modules: Dict[str, Module] = {}

    def child_name(self, key: str) -> str:
        return f"{self.name}.{key}" if self.name else key

    def add_parameter(
        self, key: str, values: np.ndarray, trainable: bool = True
    ) -> Parameter:
        if key in self._parameters:
            raise ContractError(f"Duplicate parameter '{self.child_name(key)}'")
        param = Parameter(self.child_name(key), values, trainable=trainable)
        self._parameters[key] = param
        return param

    def add_module(self, module: "Module") -> "Module":
        self._modules[module.name] = module
        return module

    def parameters(self) -> List[Parameter]:
        params = list(self._parameters.values())
        for module in self._modules.values():
            params.extend(module.parameters())
        return params

    def named_parameters(self) -> Dict[str, Parameter]:
        named: Dict[str, Parameter] = {}
        for param in self.parameters():
            if param.name in named:
                raise ContractError(f"Duplicate parameter name '{param.name}'")
            named[param.name] = param
        return named

    def trainable_parameters(self) -> List[Parameter]:
        return [param for param in self.parameters() if param.trainable]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.values.copy() for name, param in self.named_parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Copy values into matching parameters.

        Raises:
            ContractError: On missing, unexpected or mis-shaped entries.
        """
        named = self.named_parameters()
        missing = sorted(set(named) - set(state))
        unexpected = sorted(set(state) - set(named))
        if missing or unexpected:
            raise ContractError(
                f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, param in named.items():
            values = np.asarray(state[name])
            if values.shape != param.shape:
                raise ContractError(
                    f"Shape mismatch for '{name}': stored {values.shape}, "
                    f"model {param.shape}"
                )
            param.values = values.astype(_dtype, copy=True)


# ── Gradient check ──────────────────────────────────────────────────


@dataclass(frozen=True)
class GradCheckReport:
    """Worst relative error per parameter name."""

    errors: Dict[str, float]
    tol: float
    checked: Dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def failures(self) -> List[str]:
        return sorted(name for name, err in self.errors.items() if err >= self.tol)


def grad_check(
    loss_fn: Callable[[], DiffArray],
    params: Sequence[DiffArray],
    *,
    h: float = 1e-6,
    tol: float = 1e-4,
    samples: Optional[int] = None,
    seed: int = 0,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``samples`` limits how many entries per parameter are perturbed.

    Raises:
        ContractError: If the engine is not running at 64-bit precision.
        NumericFailure: If the loss is NaN or infinite at any perturbed point.
    """
    if _dtype is not np.float64:
        raise ContractError("grad_check requires float64 precision")
    for param in params:
        param.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.values).all():
        raise NumericFailure("grad_check: loss is not finite")
    backward(loss)

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    checked: Dict[str, int] = {}
    for position, param in enumerate(params):
        name = getattr(param, "name", f"param{position}")
        analytic = (
            param.grad.reshape(-1)
            if param.grad is not None
            else np.zeros(param.size, dtype=np.float64)
        )
        flat = param.values.reshape(-1)
        entries = np.arange(param.size)
        if samples is not None and param.size > samples:
            entries = np.sort(rng.choice(param.size, size=samples, replace=False))
        worst = 0.0
        with no_grad():
            for entry in entries:
                original = flat[entry]
                flat[entry] = original + h
                plus = float(loss_fn().values)
                flat[entry] = original - h
                minus = float(loss_fn().values)
                flat[entry] = original
                if not (math.isfinite(plus) and math.isfinite(minus)):
                    raise NumericFailure(
                        f"grad_check: loss not finite while perturbing {name}[{entry}]"
                    )
                numeric = (plus - minus) / (2.0 * h)
                exact = float(analytic[entry])
                scale = max(abs(exact), abs(numeric), floor)
                worst = max(worst, abs(exact - numeric) / scale)
        errors[name] = worst
        checked[name] = int(entries.size)
        if worst >= tol:
            logger.warning(
                "[%s] gradient mismatch for %s: %.3e", NUMERIC_ERROR, name, worst
            )
    return GradCheckReport(errors=errors, tol=tol, checked=checked)
