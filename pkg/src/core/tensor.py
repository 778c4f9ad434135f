"""
Tensor storage and reverse-mode automatic differentiation for SlumpVision
Dense row-major numpy buffers with an operation tape built on demand
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import (
    ConfigError,
    InvalidAxisError,
    InvalidLossError,
    InvalidShapeError,
    NoGraphError,
    ShapeMismatchError,
)
from src.core.rng import RngStream

DTYPES = {"f32": np.dtype(np.float32), "f64": np.dtype(np.float64)}

_state = threading.local()


def resolve_dtype(dtype: Union[str, np.dtype, type, None]) -> np.dtype:
    """Map 'f32'/'f64' (or a numpy float dtype) to a numpy dtype"""
    if dtype is None:
        return DTYPES["f32"]
    if isinstance(dtype, str) and dtype in DTYPES:
        return DTYPES[dtype]
    resolved = np.dtype(dtype)
    if resolved not in DTYPES.values():
        raise ConfigError(f"Unsupported dtype: {dtype}")
    return resolved


def dtype_name(dtype: np.dtype) -> str:
    return "f64" if np.dtype(dtype) == DTYPES["f64"] else "f32"


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tracing inside the block (inference and finite differences)"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """N-dimensional array with optional gradient tracking"""

    def __init__(self, data: Any, requires_grad: bool = False,
                 node: Optional["TapeNode"] = None, dtype=None):
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(resolve_dtype(dtype), copy=False)
        elif array.dtype not in DTYPES.values():
            array = array.astype(np.float32)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node = node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={dtype_name(self.dtype)}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(resolve_dtype(dtype)), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # Operators
    def __add__(self, other):
        return Add.apply(self, _coerce(other, self))

    def __radd__(self, other):
        return Add.apply(_coerce(other, self), self)

    def __sub__(self, other):
        return Sub.apply(self, _coerce(other, self))

    def __rsub__(self, other):
        return Sub.apply(_coerce(other, self), self)

    def __mul__(self, other):
        return Mul.apply(self, _coerce(other, self))

    def __rmul__(self, other):
        return Mul.apply(_coerce(other, self), self)

    def __truediv__(self, other):
        return Div.apply(self, _coerce(other, self))

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index):
        return Slice.apply(self, index=index)

    def relu(self) -> "Tensor":
        return Max0.apply(self)

    def sigmoid(self) -> "Tensor":
        return Sigmoid.apply(self)

    def tanh(self) -> "Tensor":
        return Tanh.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def sum(self, axes=None) -> "Tensor":
        return reduce("sum", self, axes)

    def mean(self, axes=None) -> "Tensor":
        return reduce("mean", self, axes)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes) if axes else None)


def _coerce(value: Any, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


class TapeNode:
    """One recorded operation: label, ordered inputs and a backward rule.

    Subclasses implement forward() on raw arrays and backward() mapping the
    output gradient to one gradient per input (None for inputs that cannot
    receive one).
    """

    op = "op"

    def __init__(self):
        self.inputs: List[Tensor] = []

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        node = cls()
        arrays = [t.data for t in tensors]
        out = node.forward(*arrays, **kwargs)
        out_dtype = np.result_type(*[a.dtype for a in arrays])
        out = np.asarray(out).astype(out_dtype, copy=False)
        if grad_enabled() and any(t.requires_grad for t in tensors):
            node.inputs = list(tensors)
            return Tensor(out, requires_grad=True, node=node)
        return Tensor(out)

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeMismatchError(f"Cannot broadcast {a.shape} with {b.shape}") from e


class Add(TapeNode):
    op = "add"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(TapeNode):
    op = "sub"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(TapeNode):
    op = "mul"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Div(TapeNode):
    op = "div"

    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Neg(TapeNode):
    op = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Max0(TapeNode):
    """ReLU; the subgradient at exactly zero is zero"""

    op = "max0"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, np.zeros((), dtype=a.dtype))

    def backward(self, grad):
        return (grad * self.mask,)


class Abs(TapeNode):
    op = "abs"

    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        return (grad * self.sign,)


class Sigmoid(TapeNode):
    op = "sigmoid"

    def forward(self, a):
        # tanh form stays finite for large |a|
        self.out = 0.5 * (np.tanh(0.5 * a) + 1.0)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(TapeNode):
    op = "tanh"

    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class MatMul(TapeNode):
    op = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(f"matmul expects [N,F]x[F,O], got {a.shape} x {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Sum(TapeNode):
    op = "sum"

    def forward(self, a, axes=None):
        self.in_shape = a.shape
        self.axes = axes
        return a.sum(axis=axes)

    def backward(self, grad):
        return (_expand_reduced(grad, self.in_shape, self.axes),)


class Mean(TapeNode):
    op = "mean"

    def forward(self, a, axes=None):
        self.in_shape = a.shape
        self.axes = axes
        reduced = a.shape if axes is None else [a.shape[i] for i in axes]
        self.count = int(np.prod(reduced)) if len(reduced) else 1
        return a.mean(axis=axes)

    def backward(self, grad):
        scale = np.asarray(1.0 / self.count, dtype=grad.dtype)
        return (_expand_reduced(grad * scale, self.in_shape, self.axes),)


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axes) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(grad, shape).copy()
    kept = list(shape)
    for axis in axes:
        kept[axis] = 1
    return np.broadcast_to(grad.reshape(kept), shape).copy()


class Reshape(TapeNode):
    op = "reshape"

    def forward(self, a, shape=None):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeMismatchError(f"Cannot reshape {a.shape} to {shape}") from e

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(TapeNode):
    op = "transpose"

    def forward(self, a, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Slice(TapeNode):
    """Basic (slice/int) indexing; no fancy indices so no overlapping writes"""

    op = "slice"

    def forward(self, a, index=None):
        self.in_shape = a.shape
        self.in_dtype = a.dtype
        self.index = index
        return a[index]

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=self.in_dtype)
        full[self.index] = grad
        return (full,)


class Stack(TapeNode):
    op = "stack"

    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.take(grad, i, axis=self.axis) for i in range(grad.shape[self.axis]))


class Concat(TapeNode):
    op = "concat"

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


_ELEMENTWISE = {
    "add": Add, "sub": Sub, "mul": Mul, "div": Div,
    "max0": Max0, "abs": Abs, "neg": Neg, "sigmoid": Sigmoid, "tanh": Tanh,
}
_UNARY = {"max0", "abs", "neg", "sigmoid", "tanh"}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Apply a named elementwise primitive with trailing-dimension broadcasting"""
    if op not in _ELEMENTWISE:
        raise ConfigError(f"Unknown elementwise op: {op}")
    if op in _UNARY:
        return _ELEMENTWISE[op].apply(a)
    if b is None:
        raise ShapeMismatchError(f"Binary op '{op}' needs two operands")
    return _ELEMENTWISE[op].apply(a, _coerce(b, a))


def normalize_axes(axes, ndim: int) -> Optional[Tuple[int, ...]]:
    """Validate an axis set; None means every axis"""
    if axes is None:
        return None
    if isinstance(axes, (int, np.integer)):
        axes = [axes]
    normalized = []
    for axis in axes:
        axis = int(axis)
        if axis < -ndim or axis >= ndim:
            raise InvalidAxisError(f"Axis {axis} out of range for rank {ndim}")
        axis = axis % ndim
        if axis in normalized:
            raise InvalidAxisError(f"Duplicate axis {axis}")
        normalized.append(axis)
    return tuple(sorted(normalized))


def reduce(op: str, a: Tensor, axes=None) -> Tensor:
    """Sum or mean over an axis set; reduced extents are removed"""
    normalized = normalize_axes(axes, a.ndim)
    if op == "sum":
        return Sum.apply(a, axes=normalized)
    if op == "mean":
        return Mean.apply(a, axes=normalized)
    raise ConfigError(f"Unknown reduction: {op}")


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every traced leaf reachable from loss"""
    if loss.size != 1:
        raise InvalidLossError(f"Loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise NoGraphError("Loss is not connected to any traced tensor")

    order = _topological_order(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for tensor in reversed(order):
        grad = pending.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.node is None:
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        input_grads = tensor.node.backward(grad)
        for parent, parent_grad in zip(tensor.node.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = np.asarray(parent_grad, dtype=parent.dtype)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative post-order DFS; inputs precede outputs"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in reversed(tensor.node.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


@dataclass(frozen=True)
class Init:
    """Initialization scheme for create()"""

    kind: str
    low: float = 0.0
    high: float = 1.0
    fan_in: int = 1
    fan_out: int = 1

    @classmethod
    def zeros(cls) -> "Init":
        return cls("zeros")

    @classmethod
    def ones(cls) -> "Init":
        return cls("ones")

    @classmethod
    def uniform(cls, low: float, high: float) -> "Init":
        return cls("uniform", low=low, high=high)

    @classmethod
    def he_uniform(cls, fan_in: int) -> "Init":
        return cls("he-uniform", fan_in=fan_in)

    @classmethod
    def glorot_uniform(cls, fan_in: int, fan_out: int) -> "Init":
        return cls("glorot-uniform", fan_in=fan_in, fan_out=fan_out)

    def bounds(self) -> Tuple[float, float]:
        if self.kind == "uniform":
            return self.low, self.high
        if self.kind == "he-uniform":
            limit = float(np.sqrt(6.0 / self.fan_in))
            return -limit, limit
        if self.kind == "glorot-uniform":
            limit = float(np.sqrt(6.0 / (self.fan_in + self.fan_out)))
            return -limit, limit
        raise ConfigError(f"Init '{self.kind}' has no bounds")


def validate_shape(shape: Iterable[int]) -> Tuple[int, ...]:
    shape = tuple(shape)
    for extent in shape:
        if not isinstance(extent, (int, np.integer)) or extent < 1:
            raise InvalidShapeError(f"Invalid extent {extent!r} in shape {shape}")
    return tuple(int(e) for e in shape)


def create(shape: Sequence[int], dtype="f32", init: Init = Init.zeros(),
           rng: Optional[Union[RngStream, np.random.Generator]] = None,
           requires_grad: bool = False) -> Tensor:
    """Allocate a tensor filled according to `init`"""
    shape = validate_shape(shape)
    np_dtype = resolve_dtype(dtype)
    if init.kind == "zeros":
        data = np.zeros(shape, dtype=np_dtype)
    elif init.kind == "ones":
        data = np.ones(shape, dtype=np_dtype)
    else:
        if rng is None:
            raise ConfigError(f"Init '{init.kind}' needs an RngStream")
        generator = rng.generator() if isinstance(rng, RngStream) else rng
        low, high = init.bounds()
        data = generator.uniform(low, high, size=shape).astype(np_dtype)
    return Tensor(data, requires_grad=requires_grad)
